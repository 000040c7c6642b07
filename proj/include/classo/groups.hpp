#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "classo/error.hpp"

namespace classo {

/// Partition of units 0..N-1 into K groups (labels 0-based; written 1-based).
struct GroupStructure {
  int K = 0;
  std::vector<int> assignment;
  std::vector<Eigen::Index> group_sizes;

  Eigen::Index n_units() const { return static_cast<Eigen::Index>(assignment.size()); }

  bool has_empty_group() const {
    for (auto s : group_sizes)
      if (s == 0) return true;
    return false;
  }

  std::vector<Eigen::Index> members(int k) const {
    std::vector<Eigen::Index> out;
    for (std::size_t i = 0; i < assignment.size(); ++i)
      if (assignment[i] == k) out.push_back(static_cast<Eigen::Index>(i));
    return out;
  }

  static GroupStructure from_assignment(std::vector<int> assignment, int K) {
    if (K < 1) fail(ErrorKind::InvalidArgument, "K must be positive");
    GroupStructure g;
    g.K = K;
    g.group_sizes.assign(static_cast<std::size_t>(K), 0);
    for (int a : assignment) {
      if (a < 0 || a >= K) fail(ErrorKind::InvalidArgument, "group label " + std::to_string(a) + " outside 0..K-1");
      ++g.group_sizes[static_cast<std::size_t>(a)];
    }
    g.assignment = std::move(assignment);
    return g;
  }

  static GroupStructure single(Eigen::Index n) { return from_assignment(std::vector<int>(static_cast<std::size_t>(n), 0), 1); }

  void require_nonempty() const {
    for (int k = 0; k < K; ++k)
      if (group_sizes[static_cast<std::size_t>(k)] == 0)
        fail(ErrorKind::EmptyGroup, "group " + std::to_string(k + 1) + " has no units");
  }

  friend bool operator==(const GroupStructure&, const GroupStructure&) = default;
};

inline void to_json(nlohmann::json& j, const GroupStructure& g) {
  std::vector<int> one_based;
  for (int a : g.assignment) one_based.push_back(a + 1);
  j = {{"K", g.K}, {"assignment", one_based}, {"group_sizes", g.group_sizes}};
}

inline void from_json(const nlohmann::json& j, GroupStructure& g) {
  std::vector<int> a = j.at("assignment").get<std::vector<int>>();
  for (int& v : a) --v;
  g = GroupStructure::from_assignment(std::move(a), j.at("K").get<int>());
}

}  // namespace classo
