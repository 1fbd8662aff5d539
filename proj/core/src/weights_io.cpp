#include "prunecert/weights_io.hpp"

#include <stdexcept>

#include <json.hpp>

#include "prunecert/csv.hpp"

namespace prunecert {

using nlohmann::json;

namespace {

json layer_to_json(const DenseLayer& l, const std::string& role) {
  json j;
  j["role"] = role;
  j["activation"] = activation_name(l.act);
  j["rows"] = l.w.rows;
  j["cols"] = l.w.cols;
  j["w"] = l.w.data;
  j["b"] = l.b;
  return j;
}

DenseLayer layer_from_json(const json& j) {
  DenseLayer l;
  l.act = activation_from_name(j.at("activation").get<std::string>());
  const std::size_t rows = j.at("rows").get<std::size_t>();
  const std::size_t cols = j.at("cols").get<std::size_t>();
  l.w = Matrix(rows, cols, j.at("w").get<std::vector<double>>());
  l.b = j.at("b").get<std::vector<double>>();
  if (l.b.size() != rows) throw std::invalid_argument("weight file: bias length mismatch");
  return l;
}

}  // namespace

std::string policy_to_text(const PolicyNetwork& net) {
  json j;
  j["version"] = 1;
  j["head"] = net.head == HeadFamily::kGaussian ? "gaussian" : "categorical";
  j["sigma"] = net.sigma;
  if (net.head == HeadFamily::kCategorical) j["k"] = net.output_dim();
  json layers = json::array();
  for (const DenseLayer& l : net.actor) layers.push_back(layer_to_json(l, "actor-trunk"));
  for (const DenseLayer& l : net.critic) layers.push_back(layer_to_json(l, "critic-trunk"));
  j["layers"] = std::move(layers);
  return j.dump(1);
}

PolicyNetwork policy_from_text(const std::string& text) {
  const json j = json::parse(text);
  if (j.at("version").get<int>() != 1) {
    throw std::invalid_argument("weight file: unsupported version");
  }
  PolicyNetwork net;
  const std::string head = j.at("head").get<std::string>();
  if (head == "gaussian") net.head = HeadFamily::kGaussian;
  else if (head == "categorical") net.head = HeadFamily::kCategorical;
  else throw std::invalid_argument("weight file: not a policy head: " + head);
  net.sigma = j.at("sigma").get<std::vector<double>>();
  for (const json& lj : j.at("layers")) {
    const std::string role = lj.at("role").get<std::string>();
    if (role == "actor-trunk") net.actor.push_back(layer_from_json(lj));
    else if (role == "critic-trunk") net.critic.push_back(layer_from_json(lj));
    else throw std::invalid_argument("weight file: unknown layer role: " + role);
  }
  if (net.actor.empty()) throw std::invalid_argument("weight file: no actor layers");
  return net;
}

void save_policy(const std::string& path, const PolicyNetwork& net) {
  write_text_file(path, policy_to_text(net));
}

PolicyNetwork load_policy(const std::string& path) {
  return policy_from_text(read_text_file(path));
}

std::string adversary_to_text(const AdversaryNet& net) {
  json j;
  j["version"] = 1;
  j["head"] = net.categorical ? "adversary-categorical" : "adversary-gaussian";
  j["sigma"] = json::array();
  if (net.categorical) {
    j["tiles"] = net.tiles;
    j["blocks"] = net.blocks;
  }
  json layers = json::array();
  for (const DenseLayer& l : net.trunk) layers.push_back(layer_to_json(l, "adversary-trunk"));
  if (!net.categorical) {
    layers.push_back(layer_to_json(net.head_mu, "head-mu"));
    layers.push_back(layer_to_json(net.head_logsigma, "head-logsigma"));
  } else {
    layers.push_back(layer_to_json(net.head_tiles, "head-tiles"));
  }
  layers.push_back(layer_to_json(net.head_mask, "head-mask"));
  for (const DenseLayer& l : net.critic) layers.push_back(layer_to_json(l, "adversary-critic"));
  j["layers"] = std::move(layers);
  return j.dump(1);
}

AdversaryNet adversary_from_text(const std::string& text) {
  const json j = json::parse(text);
  AdversaryNet net;
  const std::string head = j.at("head").get<std::string>();
  if (head == "adversary-gaussian") net.categorical = false;
  else if (head == "adversary-categorical") net.categorical = true;
  else throw std::invalid_argument("weight file: not an adversary head: " + head);
  if (net.categorical) {
    net.tiles = j.at("tiles").get<std::size_t>();
    net.blocks = j.at("blocks").get<std::size_t>();
  }
  for (const json& lj : j.at("layers")) {
    const std::string role = lj.at("role").get<std::string>();
    DenseLayer l = layer_from_json(lj);
    if (role == "adversary-trunk") net.trunk.push_back(std::move(l));
    else if (role == "head-mu") net.head_mu = std::move(l);
    else if (role == "head-logsigma") net.head_logsigma = std::move(l);
    else if (role == "head-tiles") net.head_tiles = std::move(l);
    else if (role == "head-mask") net.head_mask = std::move(l);
    else if (role == "adversary-critic") net.critic.push_back(std::move(l));
    else throw std::invalid_argument("weight file: unknown layer role: " + role);
  }
  return net;
}

void save_adversary(const std::string& path, const AdversaryNet& net) {
  write_text_file(path, adversary_to_text(net));
}

AdversaryNet load_adversary(const std::string& path) {
  return adversary_from_text(read_text_file(path));
}

void save_masks(const std::string& path, const MaskFile& masks) {
  json j;
  j["version"] = 1;
  j["head"] = "mask";
  j["sigma"] = json::array();
  json layers = json::array();
  for (std::size_t i = 0; i < masks.masks.size(); ++i) {
    DenseLayer l;
    l.w = masks.masks[i];
    l.b.assign(masks.masks[i].rows, 1.0);
    l.act = Activation::kIdentity;
    layers.push_back(layer_to_json(l, masks.roles[i]));
  }
  j["layers"] = std::move(layers);
  write_text_file(path, j.dump(1));
}

MaskFile load_masks(const std::string& path) {
  const json j = json::parse(read_text_file(path));
  if (j.at("head").get<std::string>() != "mask") {
    throw std::invalid_argument("not a mask file: " + path);
  }
  MaskFile out;
  for (const json& lj : j.at("layers")) {
    out.roles.push_back(lj.at("role").get<std::string>());
    DenseLayer l = layer_from_json(lj);
    for (double v : l.w.data) {
      if (v != 0.0 && v != 1.0) {
        throw std::invalid_argument("mask file: entries must be 0 or 1");
      }
    }
    out.masks.push_back(std::move(l.w));
  }
  return out;
}

}  // namespace prunecert
