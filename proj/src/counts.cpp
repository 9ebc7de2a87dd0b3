#include "nestwave/counts.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "nestwave/errors.hpp"
#include "nestwave/numeric.hpp"

namespace nestwave {

using json = nlohmann::json;

std::int64_t HaulRecord::total() const {
  return std::accumulate(counts.begin(), counts.end(), std::int64_t{0});
}

HaulDataset::HaulDataset(std::vector<std::string> category_names, std::vector<HaulRecord> records,
                         int num_quarters, int num_trips)
    : category_names_(std::move(category_names)), records_(std::move(records)) {
  if (category_names_.size() < 2) throw ValidationError("dataset needs at least 2 categories");
  int max_quarter = 0;
  int max_trip = 0;
  for (std::size_t i = 0; i < records_.size(); ++i) {
    const HaulRecord& r = records_[i];
    const std::string where = "record " + std::to_string(i + 1);
    if (r.counts.size() != category_names_.size()) {
      throw ValidationError(where + ": expected " + std::to_string(category_names_.size()) +
                            " counts, got " + std::to_string(r.counts.size()));
    }
    for (std::int64_t c : r.counts) {
      if (c < 0) throw ValidationError(where + ": negative count");
    }
    if (r.trip < 1) throw ValidationError(where + ": trip id must be >= 1");
    if (r.quarter < 1) throw ValidationError(where + ": quarter must be >= 1");
    max_quarter = std::max(max_quarter, r.quarter);
    max_trip = std::max(max_trip, r.trip);
  }
  num_quarters_ = num_quarters > 0 ? num_quarters : max_quarter;
  num_trips_ = num_trips > 0 ? num_trips : max_trip;
  if (max_quarter > num_quarters_) throw ValidationError("quarter outside declared series span");
  if (max_trip > num_trips_) throw ValidationError("trip id outside declared trip count");
}

std::vector<std::int64_t> HaulDataset::category_totals() const {
  std::vector<std::int64_t> totals(num_categories(), 0);
  for (const HaulRecord& r : records_) {
    for (std::size_t k = 0; k < totals.size(); ++k) totals[k] += r.counts[k];
  }
  return totals;
}

HaulDataset HaulDataset::subset(std::span<const std::size_t> indices) const {
  std::vector<HaulRecord> kept;
  kept.reserve(indices.size());
  for (std::size_t i : indices) kept.push_back(records_.at(i));
  return HaulDataset(category_names_, std::move(kept), num_quarters_, num_trips_);
}

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) fields.push_back(trim(field));
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

std::int64_t parse_integer(const std::string& text, std::size_t line_no, std::string_view column) {
  std::int64_t value = 0;
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end || text.empty()) {
    throw ValidationError("line " + std::to_string(line_no) + ": column '" + std::string(column) +
                          "' is not an integer: '" + text + "'");
  }
  return value;
}

}  // namespace

HaulDataset read_haul_csv(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (!trim(line).empty()) {
      header = split_csv_line(line);
      break;
    }
  }
  if (header.empty()) throw ValidationError("haul CSV is empty");
  if (header.size() < 5 || header[0] != "trip" || header[1] != "obs" || header[2] != "quarter") {
    throw ValidationError("line " + std::to_string(line_no) +
                          ": header must be trip,obs,quarter,<cat1>,...,<catK> with K >= 2");
  }
  std::vector<std::string> categories(header.begin() + 3, header.end());

  std::vector<HaulRecord> records;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != header.size()) {
      throw ValidationError("line " + std::to_string(line_no) + ": expected " +
                            std::to_string(header.size()) + " fields, got " +
                            std::to_string(fields.size()));
    }
    HaulRecord r;
    r.trip = static_cast<int>(parse_integer(fields[0], line_no, "trip"));
    r.obs = static_cast<int>(parse_integer(fields[1], line_no, "obs"));
    r.quarter = static_cast<int>(parse_integer(fields[2], line_no, "quarter"));
    if (r.trip < 1) throw ValidationError("line " + std::to_string(line_no) + ": trip must be >= 1");
    if (r.quarter < 1) {
      throw ValidationError("line " + std::to_string(line_no) + ": quarter must be >= 1");
    }
    for (std::size_t k = 3; k < fields.size(); ++k) {
      const std::int64_t c = parse_integer(fields[k], line_no, header[k]);
      if (c < 0) {
        throw ValidationError("line " + std::to_string(line_no) + ": negative count in column '" +
                              header[k] + "'");
      }
      r.counts.push_back(c);
    }
    records.push_back(std::move(r));
  }
  if (records.empty()) throw ValidationError("haul CSV has a header but no records");
  return HaulDataset(std::move(categories), std::move(records));
}

HaulDataset read_haul_csv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open data file '" + path + "'");
  return read_haul_csv(in);
}

void write_haul_csv(std::ostream& out, const HaulDataset& data) {
  out << "trip,obs,quarter";
  for (const auto& name : data.category_names()) out << ',' << name;
  out << '\n';
  for (const HaulRecord& r : data.records()) {
    out << r.trip << ',' << r.obs << ',' << r.quarter;
    for (std::int64_t c : r.counts) out << ',' << c;
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// Nesting tree

namespace {

struct RawNode {
  std::string label;
  json left;
  json right;
};

class TreeBuilder {
 public:
  TreeBuilder(std::vector<std::string> names, std::map<std::string, RawNode> raw)
      : names_(std::move(names)), raw_(std::move(raw)) {}

  std::vector<NestingNode> build(const std::string& root) {
    if (!raw_.count(root)) throw NestingError(root, "root label does not name a node");
    std::vector<NestingNode> nodes;
    visit(root, 0, nodes);
    if (nodes.size() != raw_.size()) {
      for (const auto& [label, _] : raw_) {
        if (!visited_.count(label)) throw NestingError(label, "node is not reachable from the root");
      }
    }
    return nodes;
  }

 private:
  // Resolves a child spec to either a node label or a category set.
  struct Child {
    std::optional<std::string> node;
    std::vector<int> categories;
  };

  std::optional<int> category_by_name(const std::string& name) const {
    for (std::size_t k = 0; k < names_.size(); ++k) {
      if (names_[k] == name) return static_cast<int>(k);
    }
    return std::nullopt;
  }

  int category_index(const json& j, const std::string& owner) const {
    if (!j.is_number_integer()) throw NestingError(owner, "category index must be an integer");
    const int k = j.get<int>();
    if (k < 1 || k > static_cast<int>(names_.size())) {
      throw NestingError(owner, "category index " + std::to_string(k) + " outside 1.." +
                                    std::to_string(names_.size()));
    }
    return k - 1;
  }

  Child resolve(const json& spec, const std::string& owner) {
    Child c;
    if (spec.is_string()) {
      const auto s = spec.get<std::string>();
      if (raw_.count(s)) {
        c.node = s;
      } else if (auto k = category_by_name(s)) {
        c.categories = {*k};
      } else {
        throw NestingError(owner, "child '" + s + "' is neither a node label nor a category");
      }
    } else if (spec.is_number_integer()) {
      c.categories = {category_index(spec, owner)};
    } else if (spec.is_array()) {
      std::set<int> set;
      for (const auto& e : spec) {
        if (!set.insert(category_index(e, owner)).second) {
          throw NestingError(owner, "category listed twice in one child");
        }
      }
      c.categories.assign(set.begin(), set.end());
      if (c.categories.empty()) throw NestingError(owner, "empty child set");
      if (c.categories.size() > 1) {
        // A multi-category set must be some node's member set.
        for (const auto& [label, _] : raw_) {
          if (label != owner && members_of(label) == c.categories) {
            c.node = label;
            break;
          }
        }
        if (!c.node) {
          throw NestingError(owner, "child set of " + std::to_string(c.categories.size()) +
                                        " categories is not split by any node");
        }
      }
    } else {
      throw NestingError(owner, "unsupported child specification");
    }
    return c;
  }

  std::vector<int> members_of(const std::string& label) {
    if (auto it = member_cache_.find(label); it != member_cache_.end()) return it->second;
    if (in_progress_.count(label)) throw NestingError(label, "cycle in nesting config");
    in_progress_.insert(label);
    const RawNode& n = raw_.at(label);
    std::vector<int> out;
    for (const json* spec : {&n.left, &n.right}) {
      Child c;
      if (spec->is_string() && raw_.count(spec->get<std::string>())) {
        c.node = spec->get<std::string>();
      } else if (spec->is_array() && spec->size() > 1) {
        // Member sets given explicitly.
        for (const auto& e : *spec) c.categories.push_back(category_index(e, label));
      } else {
        c = resolve(*spec, label);
      }
      const auto part = c.categories.empty() ? members_of(*c.node) : c.categories;
      out.insert(out.end(), part.begin(), part.end());
    }
    std::sort(out.begin(), out.end());
    in_progress_.erase(label);
    member_cache_[label] = out;
    return out;
  }

  int visit(const std::string& label, int depth, std::vector<NestingNode>& nodes) {
    if (!visited_.insert(label).second) throw NestingError(label, "node used more than once");
    const RawNode& raw = raw_.at(label);
    const int index = static_cast<int>(nodes.size());
    nodes.push_back(NestingNode{label, {}, {}, {}, -1, -1, depth});

    const Child left = resolve(raw.left, label);
    const Child right = resolve(raw.right, label);
    std::vector<int> left_set;
    std::vector<int> right_set;
    if (left.node) {
      nodes[index].left_child = visit(*left.node, depth + 1, nodes);
      left_set = nodes[nodes[index].left_child].members;
    } else {
      left_set = left.categories;
    }
    if (right.node) {
      nodes[index].right_child = visit(*right.node, depth + 1, nodes);
      right_set = nodes[nodes[index].right_child].members;
    } else {
      right_set = right.categories;
    }

    std::vector<int> overlap;
    std::set_intersection(left_set.begin(), left_set.end(), right_set.begin(), right_set.end(),
                          std::back_inserter(overlap));
    if (!overlap.empty()) {
      throw NestingError(label, "category " + std::to_string(overlap.front() + 1) +
                                    " appears in both children");
    }
    NestingNode& node = nodes[index];
    node.left = left_set;
    node.right = right_set;
    std::merge(left_set.begin(), left_set.end(), right_set.begin(), right_set.end(),
               std::back_inserter(node.members));
    return index;
  }

  std::vector<std::string> names_;
  std::map<std::string, RawNode> raw_;
  std::map<std::string, std::vector<int>> member_cache_;
  std::set<std::string> in_progress_;
  std::set<std::string> visited_;
};

}  // namespace

NestingTree NestingTree::parse(std::string_view config_text) {
  json doc;
  try {
    doc = json::parse(config_text);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("nesting config is not valid JSON: ") + e.what());
  }
  if (!doc.is_object() || !doc.contains("nodes") || !doc["nodes"].is_array() ||
      doc["nodes"].empty()) {
    throw ValidationError("nesting config needs a non-empty \"nodes\" array");
  }

  std::map<std::string, RawNode> raw;
  std::vector<std::string> order;
  int max_index = 0;
  std::function<void(const json&)> scan_indices = [&](const json& j) {
    if (j.is_number_integer()) max_index = std::max(max_index, j.get<int>());
    if (j.is_array()) {
      for (const auto& e : j) scan_indices(e);
    }
  };
  for (const auto& n : doc["nodes"]) {
    if (!n.is_object() || !n.contains("label") || !n["label"].is_string()) {
      throw ValidationError("every nesting node needs a string \"label\"");
    }
    const auto label = n["label"].get<std::string>();
    if (!n.contains("children") || !n["children"].is_array()) {
      throw NestingError(label, "missing \"children\" array");
    }
    if (n["children"].size() != 2) {
      throw NestingError(label, "non-binary split with " + std::to_string(n["children"].size()) +
                                    " children");
    }
    if (raw.count(label)) throw NestingError(label, "duplicate node label");
    raw[label] = RawNode{label, n["children"][0], n["children"][1]};
    order.push_back(label);
    scan_indices(n["children"]);
  }

  NestingTree tree;
  if (doc.contains("categories")) {
    tree.category_names_ = doc["categories"].get<std::vector<std::string>>();
  } else {
    for (int k = 1; k <= max_index; ++k) tree.category_names_.push_back("y" + std::to_string(k));
  }
  const std::size_t K = tree.category_names_.size();
  if (K < 2) throw ValidationError("nesting config covers fewer than 2 categories");

  const std::string root = doc.contains("root") ? doc["root"].get<std::string>() : order.front();
  TreeBuilder builder(tree.category_names_, std::move(raw));
  tree.nodes_ = builder.build(root);

  const NestingNode& r = tree.nodes_.front();
  if (r.members.size() != K) {
    std::vector<int> all(K);
    std::iota(all.begin(), all.end(), 0);
    std::vector<int> missing;
    std::set_difference(all.begin(), all.end(), r.members.begin(), r.members.end(),
                        std::back_inserter(missing));
    throw NestingError(r.label, "category " + std::to_string(missing.front() + 1) +
                                    " is missing from the tree");
  }
  if (tree.nodes_.size() != K - 1) {
    throw NestingError(r.label, "expected " + std::to_string(K - 1) + " internal nodes, found " +
                                    std::to_string(tree.nodes_.size()));
  }
  return tree;
}

NestingTree NestingTree::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open nesting config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

NestingTree NestingTree::balanced(const std::vector<std::string>& category_names) {
  const int K = static_cast<int>(category_names.size());
  if (K < 2) throw ValidationError("need at least 2 categories");
  json nodes = json::array();
  std::function<json(int, int)> build = [&](int lo, int hi) -> json {
    if (hi - lo == 1) return lo + 1;
    const int mid = lo + (hi - lo + 1) / 2;
    std::string label = category_names[lo] + ".." + category_names[hi - 1];
    json left = build(lo, mid);
    json right = build(mid, hi);
    nodes.push_back({{"label", label}, {"children", {left, right}}});
    return label;
  };
  const json root = build(0, K);
  json doc{{"categories", category_names}, {"root", root}, {"nodes", nodes}};
  return parse(doc.dump());
}

const NestingNode& NestingTree::node(std::string_view label) const {
  for (const auto& n : nodes_) {
    if (n.label == label) return n;
  }
  throw ValidationError("no nesting node labelled '" + std::string(label) + "'");
}

std::string NestingTree::to_json() const {
  json nodes = json::array();
  for (const auto& n : nodes_) {
    auto child = [&](int index, const std::vector<int>& set) -> json {
      if (index >= 0) return nodes_[index].label;
      return set.front() + 1;
    };
    nodes.push_back({{"label", n.label},
                     {"children", {child(n.left_child, n.left), child(n.right_child, n.right)}}});
  }
  json doc{{"categories", category_names_}, {"root", nodes_.front().label}, {"nodes", nodes}};
  return doc.dump(2);
}

// ---------------------------------------------------------------------------
// Aggregation

std::size_t BranchDataset::num_active() const {
  return static_cast<std::size_t>(
      std::count_if(pairs.begin(), pairs.end(), [](const BranchPair& p) { return p.active(); }));
}

double BranchDataset::boundary_fraction() const {
  std::size_t active = 0;
  std::size_t boundary = 0;
  for (const auto& p : pairs) {
    if (!p.active()) continue;
    ++active;
    if (p.successes == 0 || p.successes == p.trials) ++boundary;
  }
  return active == 0 ? 0.0 : static_cast<double>(boundary) / static_cast<double>(active);
}

BranchDataset aggregate_branch(const HaulDataset& data, const NestingNode& node) {
  for (int k : node.members) {
    if (k < 0 || static_cast<std::size_t>(k) >= data.num_categories()) {
      throw ValidationError("nesting node '" + node.label + "' references category " +
                            std::to_string(k + 1) + " but the data has " +
                            std::to_string(data.num_categories()));
    }
  }
  BranchDataset out;
  out.node_label = node.label;
  out.num_quarters = data.num_quarters();
  out.num_trips = data.num_trips();
  out.pairs.reserve(data.size());
  for (const HaulRecord& r : data.records()) {
    BranchPair p;
    for (int k : node.left) p.successes += r.counts[k];
    for (int k : node.members) p.trials += r.counts[k];
    p.quarter = r.quarter;
    p.trip = r.trip;
    out.pairs.push_back(p);
  }
  return out;
}

NestedLoglik nested_loglik_check(std::span<const std::int64_t> counts, std::span<const double> probs,
                                 const NestingTree& tree) {
  if (counts.size() != tree.num_categories() || probs.size() != tree.num_categories()) {
    throw ValidationError("count/probability vectors do not match the tree's category count");
  }
  NestedLoglik out;
  for (const NestingNode& node : tree.nodes()) {
    std::int64_t n = 0;
    std::int64_t s = 0;
    double p_member = 0.0;
    double p_left = 0.0;
    for (int k : node.members) {
      n += counts[k];
      p_member += probs[k];
    }
    for (int k : node.left) {
      s += counts[k];
      p_left += probs[k];
    }
    if (n == 0) continue;
    if (p_member <= 0.0) {
      out.value = kNegInf;
      out.degenerate = true;
      return out;
    }
    const double q = p_left / p_member;
    double term = log_choose(n, s);
    if (s > 0) term += static_cast<double>(s) * std::log(q);
    if (n - s > 0) term += static_cast<double>(n - s) * std::log1p(-q);
    if (!std::isfinite(term)) {
      out.value = kNegInf;
      out.degenerate = true;
      return out;
    }
    out.value += term;
  }
  return out;
}

}  // namespace nestwave
