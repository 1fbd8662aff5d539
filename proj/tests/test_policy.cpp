#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>

#include "prunecert/policy.hpp"
#include "prunecert/weights_io.hpp"

using namespace prunecert;

TEST_CASE("forward on a zero network gives the head defaults") {
  PolicyNetwork net;
  DenseLayer l;
  l.w = Matrix::zeros(2, 3);
  l.b = {0.0, 0.0};
  l.act = Activation::kIdentity;
  net.actor = {l};
  DenseLayer c;
  c.w = Matrix::zeros(1, 3);
  c.b = {0.0};
  c.act = Activation::kIdentity;
  net.critic = {c};
  net.head = HeadFamily::kGaussian;
  net.sigma = {0.1, 0.1};
  const std::vector<double> s{1.0, -1.0, 0.5};
  const ForwardResult r = forward(net, s);
  CHECK(r.dist.mean == std::vector<double>{0.0, 0.0});
  CHECK(r.dist.std == std::vector<double>{0.1, 0.1});
  CHECK(r.value == 0.0);
}

TEST_CASE("categorical forward with zero logits is uniform") {
  PolicyNetwork net;
  DenseLayer l;
  l.w = Matrix::zeros(3, 2);
  l.b = {0.0, 0.0, 0.0};
  l.act = Activation::kIdentity;
  net.actor = {l};
  net.critic = {l};
  net.head = HeadFamily::kCategorical;
  const ForwardResult r = forward(net, std::vector<double>{1.0, 2.0});
  for (double p : r.dist.probs) CHECK(p == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("hand-computed one-hidden-unit tanh forward") {
  // h = tanh(0.5*1 + 0.25); mean = 2*h - 1
  PolicyNetwork net;
  DenseLayer l1;
  l1.w = Matrix{{0.5}};
  l1.b = {0.25};
  l1.act = Activation::kTanh;
  DenseLayer l2;
  l2.w = Matrix{{2.0}};
  l2.b = {-1.0};
  l2.act = Activation::kIdentity;
  net.actor = {l1, l2};
  net.critic = {l1, l2};
  net.head = HeadFamily::kGaussian;
  net.sigma = {0.1};
  const ForwardResult r = forward(net, std::vector<double>{1.0});
  const double expected = 2.0 * std::tanh(0.75) - 1.0;
  CHECK(r.dist.mean[0] == doctest::Approx(expected));
  CHECK(r.value == doctest::Approx(expected));
}

TEST_CASE("forward rejects dimension mismatch") {
  std::mt19937_64 rng(1);
  std::vector<std::size_t> hidden{4};
  PolicyNetwork net =
      make_mlp_policy(3, 2, hidden, Activation::kTanh, HeadFamily::kGaussian, 0.1, rng);
  CHECK_THROWS_AS(forward(net, std::vector<double>{1.0, 2.0}), std::invalid_argument);
}

TEST_CASE("orthogonal init produces orthonormal columns scaled by gain") {
  std::mt19937_64 rng(2);
  const Matrix w = orthogonal_init(6, 3, 2.0, rng);
  for (std::size_t a = 0; a < 3; ++a) {
    for (std::size_t b = 0; b <= a; ++b) {
      double dot = 0.0;
      for (std::size_t i = 0; i < 6; ++i) dot += w(i, a) * w(i, b);
      CHECK(dot == doctest::Approx(a == b ? 4.0 : 0.0).epsilon(1e-9));
    }
  }
}

TEST_CASE("weight files round-trip bit-exactly") {
  std::mt19937_64 rng(3);
  std::vector<std::size_t> hidden{5, 4};
  PolicyNetwork net =
      make_mlp_policy(3, 2, hidden, Activation::kTanh, HeadFamily::kGaussian, 0.1, rng);
  const std::string text = policy_to_text(net);
  const PolicyNetwork back = policy_from_text(text);
  CHECK(back.actor.size() == net.actor.size());
  CHECK(back.critic.size() == net.critic.size());
  for (std::size_t l = 0; l < net.actor.size(); ++l) {
    CHECK(back.actor[l].w.data == net.actor[l].w.data);
    CHECK(back.actor[l].b == net.actor[l].b);
    CHECK(back.actor[l].act == net.actor[l].act);
  }
  CHECK(back.sigma == net.sigma);
  // a second serialization is byte-identical
  CHECK(policy_to_text(back) == text);
}

TEST_CASE("categorical weight files carry k") {
  std::mt19937_64 rng(4);
  std::vector<std::size_t> hidden{4};
  PolicyNetwork net = make_mlp_policy(6, 5, hidden, Activation::kRelu,
                                      HeadFamily::kCategorical, 0.0, rng);
  const PolicyNetwork back = policy_from_text(policy_to_text(net));
  CHECK(back.head == HeadFamily::kCategorical);
  CHECK(back.output_dim() == 5);
}

TEST_CASE("adversary weight files round-trip") {
  std::mt19937_64 rng(5);
  std::vector<std::size_t> hidden{8};
  AdversaryNet adv = make_gaussian_adversary(4, hidden, Activation::kTanh, rng);
  const AdversaryNet back = adversary_from_text(adversary_to_text(adv));
  CHECK(back.categorical == false);
  CHECK(back.head_mu.w.data == adv.head_mu.w.data);
  CHECK(back.head_logsigma.w.data == adv.head_logsigma.w.data);
  CHECK(back.head_mask.w.data == adv.head_mask.w.data);
  CHECK(back.critic.size() == adv.critic.size());

  AdversaryNet cat = make_categorical_adversary(12, 4, 3, hidden, Activation::kTanh, rng);
  const AdversaryNet cback = adversary_from_text(adversary_to_text(cat));
  CHECK(cback.categorical == true);
  CHECK(cback.tiles == 4);
  CHECK(cback.blocks == 3);
  CHECK(cback.head_tiles.w.data == cat.head_tiles.w.data);
}

TEST_CASE("mask files reject non-binary entries") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "prunecert_mask_test";
  fs::create_directories(dir);
  MaskFile mf;
  mf.roles = {"actor-trunk"};
  Matrix m(2, 2);
  m.data = {1.0, 0.0, 1.0, 1.0};
  mf.masks = {m};
  const std::string path = (dir / "mask.json").string();
  save_masks(path, mf);
  const MaskFile back = load_masks(path);
  CHECK(back.masks[0].data == m.data);
  CHECK(back.roles[0] == "actor-trunk");
  fs::remove_all(dir);
}

TEST_CASE("actor param jacobian of a rank-1 linear model is the input") {
  // g(s) = w . s with one weight row: d g / d w_j = s_j, d g / d b = 1
  PolicyNetwork net;
  DenseLayer l;
  l.w = Matrix{{2.0, -1.0, 0.5}};
  l.b = {0.3};
  l.act = Activation::kIdentity;
  net.actor = {l};
  const std::vector<double> s{1.0, 2.0, 3.0};
  const Matrix j = actor_param_jacobian(net, s);
  CHECK(j.rows == 1);
  CHECK(j.cols == 4);
  CHECK(j(0, 0) == doctest::Approx(1.0));
  CHECK(j(0, 1) == doctest::Approx(2.0));
  CHECK(j(0, 2) == doctest::Approx(3.0));
  CHECK(j(0, 3) == doctest::Approx(1.0));
}
