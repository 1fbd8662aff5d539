#pragma once

#include <string>
#include <vector>

#include "prunecert/adversary_net.hpp"
#include "prunecert/matrix.hpp"
#include "prunecert/policy.hpp"

namespace prunecert {

// Shared weight-file format: a JSON document with fields
//   version, head, sigma, layers[] {role, activation, rows, cols, w, b}
// Doubles are rendered with shortest round-trip decimals, so save/load is
// bit-exact. Roles are "actor-trunk" / "critic-trunk" for policies; adversary
// nets use an "adversary" head descriptor with head-specific roles.

std::string policy_to_text(const PolicyNetwork& net);
PolicyNetwork policy_from_text(const std::string& text);
void save_policy(const std::string& path, const PolicyNetwork& net);
PolicyNetwork load_policy(const std::string& path);

std::string adversary_to_text(const AdversaryNet& net);
AdversaryNet adversary_from_text(const std::string& text);
void save_adversary(const std::string& path, const AdversaryNet& net);
AdversaryNet load_adversary(const std::string& path);

struct MaskFile {
  std::vector<std::string> roles;
  std::vector<Matrix> masks;
};

void save_masks(const std::string& path, const MaskFile& masks);
MaskFile load_masks(const std::string& path);

}  // namespace prunecert
