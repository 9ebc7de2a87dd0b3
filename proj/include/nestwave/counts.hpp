#pragma once

// Haul-level count data, the binary nesting tree over categories, and the
// per-node aggregation that turns one K-category record into a (successes,
// trials) pair for each internal node.

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace nestwave {

struct HaulRecord {
  int trip = 0;     // 1..J
  int obs = 0;      // 1..n_j within the trip
  int quarter = 0;  // 1..T
  std::vector<std::int64_t> counts;

  std::int64_t total() const;
  bool operator==(const HaulRecord&) const = default;
};

class HaulDataset {
 public:
  HaulDataset() = default;

  // num_quarters / num_trips of 0 mean "the largest value present".
  HaulDataset(std::vector<std::string> category_names, std::vector<HaulRecord> records,
              int num_quarters = 0, int num_trips = 0);

  std::size_t num_categories() const { return category_names_.size(); }
  int num_quarters() const { return num_quarters_; }
  int num_trips() const { return num_trips_; }
  std::size_t size() const { return records_.size(); }

  const std::vector<HaulRecord>& records() const { return records_; }
  const HaulRecord& record(std::size_t i) const { return records_[i]; }
  const std::vector<std::string>& category_names() const { return category_names_; }

  std::vector<std::int64_t> category_totals() const;

  // Subset keeping the declared T, J and category labels.
  HaulDataset subset(std::span<const std::size_t> indices) const;

 private:
  std::vector<std::string> category_names_;
  std::vector<HaulRecord> records_;
  int num_quarters_ = 0;
  int num_trips_ = 0;
};

// Header `trip,obs,quarter,<cat1>,...,<catK>`. Throws ValidationError with the
// offending line number.
HaulDataset read_haul_csv(std::istream& in);
HaulDataset read_haul_csv_file(const std::string& path);
void write_haul_csv(std::ostream& out, const HaulDataset& data);

struct NestingNode {
  std::string label;
  std::vector<int> members;  // 0-based category indices, sorted
  std::vector<int> left;
  std::vector<int> right;
  int left_child = -1;  // index into NestingTree::nodes(), -1 for a leaf
  int right_child = -1;
  int depth = 0;
};

class NestingTree {
 public:
  // JSON config:
  //   {"categories": [...optional names...], "root": "label",
  //    "nodes": [{"label": "...", "children": [left, right]}, ...]}
  // A child is a node label (string), a 1-based category index, a category
  // name, or a list of 1-based indices naming a singleton or another node's
  // member set.
  static NestingTree parse(std::string_view config_text);
  static NestingTree parse_file(const std::string& path);

  // Balanced-ish default: categories split in half recursively.
  static NestingTree balanced(const std::vector<std::string>& category_names);

  std::size_t num_categories() const { return category_names_.size(); }
  const std::vector<std::string>& category_names() const { return category_names_; }

  // Pre-order: root first, then left subtree, then right subtree.
  const std::vector<NestingNode>& nodes() const { return nodes_; }
  const NestingNode& root() const { return nodes_.front(); }
  const NestingNode& node(std::string_view label) const;

  std::string to_json() const;

 private:
  std::vector<std::string> category_names_;
  std::vector<NestingNode> nodes_;
};

struct BranchPair {
  std::int64_t successes = 0;  // sum over the left set
  std::int64_t trials = 0;     // sum over the member set
  int quarter = 0;
  int trip = 0;

  // Pairs with zero trials are excluded from the branch likelihood.
  bool active() const { return trials > 0; }
};

struct BranchDataset {
  std::string node_label;
  std::vector<BranchPair> pairs;  // one per haul record, same order
  int num_quarters = 0;
  int num_trips = 0;

  std::size_t num_active() const;
  // Fraction of active pairs sitting at 0 or at the trial count.
  double boundary_fraction() const;
};

BranchDataset aggregate_branch(const HaulDataset& data, const NestingNode& node);

struct NestedLoglik {
  double value = 0.0;
  // A member set with zero probability mass received a positive count.
  bool degenerate = false;
};

// Sum over internal nodes of binomial log-pmf(successes | trials, p_left/p_member).
// Equals the multinomial log-pmf of the counts; used as a test oracle.
NestedLoglik nested_loglik_check(std::span<const std::int64_t> counts, std::span<const double> probs,
                                 const NestingTree& tree);

}  // namespace nestwave
