#pragma once

#include <array>
#include <cctype>
#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "lossforge/tensor.hpp"

namespace lossforge {

// Graph inputs. Classification-style branches bind y/yhat; box-regression
// branches bind the intersection/union/enclosure areas derived from the
// predicted and target boxes. The constant one needs no binding.
enum class LeafKind { Y, YHat, One, BoxI, BoxU, BoxE };

enum class OpKind {
  Add, Mul,
  Neg, Abs, Inv, Log, Exp, Tanh, Square, Sqrt,
  MeanNhw, MeanC, MaxPool, MinPool,
};

inline constexpr int kOpCount = 14;
inline constexpr std::array<OpKind, kOpCount> kAllOps = {
    OpKind::Add,  OpKind::Mul,  OpKind::Neg,     OpKind::Abs,   OpKind::Inv,
    OpKind::Log,  OpKind::Exp,  OpKind::Tanh,    OpKind::Square, OpKind::Sqrt,
    OpKind::MeanNhw, OpKind::MeanC, OpKind::MaxPool, OpKind::MinPool,
};

inline int arity(OpKind op) {
  return (op == OpKind::Add || op == OpKind::Mul) ? 2 : 1;
}

inline std::string_view op_name(OpKind op) {
  switch (op) {
    case OpKind::Add: return "add";
    case OpKind::Mul: return "mul";
    case OpKind::Neg: return "neg";
    case OpKind::Abs: return "abs";
    case OpKind::Inv: return "inv";
    case OpKind::Log: return "log";
    case OpKind::Exp: return "exp";
    case OpKind::Tanh: return "tanh";
    case OpKind::Square: return "square";
    case OpKind::Sqrt: return "sqrt";
    case OpKind::MeanNhw: return "mean_nhw";
    case OpKind::MeanC: return "mean_c";
    case OpKind::MaxPool: return "max_pool";
    case OpKind::MinPool: return "min_pool";
  }
  return "?";
}

inline std::string_view leaf_name(LeafKind k) {
  switch (k) {
    case LeafKind::Y: return "y";
    case LeafKind::YHat: return "yhat";
    case LeafKind::One: return "one";
    case LeafKind::BoxI: return "i";
    case LeafKind::BoxU: return "u";
    case LeafKind::BoxE: return "e";
  }
  return "?";
}

// A node of the rooted expression tree. Value semantics: copying a node
// deep-copies its subtree.
struct ExprNode {
  bool is_leaf = true;
  LeafKind leaf = LeafKind::One;
  OpKind op = OpKind::Add;
  std::vector<ExprNode> children;

  static ExprNode make_leaf(LeafKind k) {
    ExprNode n;
    n.is_leaf = true;
    n.leaf = k;
    return n;
  }
  static ExprNode make_op(OpKind op, std::vector<ExprNode> children) {
    ExprNode n;
    n.is_leaf = false;
    n.op = op;
    n.children = std::move(children);
    return n;
  }
};

inline bool structurally_equal(const ExprNode& a, const ExprNode& b) {
  if (a.is_leaf != b.is_leaf) return false;
  if (a.is_leaf) return a.leaf == b.leaf;
  if (a.op != b.op || a.children.size() != b.children.size()) return false;
  for (std::size_t i = 0; i < a.children.size(); ++i) {
    if (!structurally_equal(a.children[i], b.children[i])) return false;
  }
  return true;
}

inline int node_count(const ExprNode& n) {
  int count = 1;
  for (const ExprNode& c : n.children) count += node_count(c);
  return count;
}

// Tree height in nodes: a bare leaf has depth 1.
inline int tree_depth(const ExprNode& n) {
  int d = 0;
  for (const ExprNode& c : n.children) d = std::max(d, tree_depth(c));
  return d + 1;
}

inline bool validate_node(const ExprNode& n) {
  if (n.is_leaf) return n.children.empty();
  if (int(n.children.size()) != arity(n.op)) return false;
  for (const ExprNode& c : n.children) {
    if (!validate_node(c)) return false;
  }
  return true;
}

// One loss branch: a rooted expression tree below the (implicit) output node.
// The output node itself carries no operation; it only feeds the tree result
// into the scalar aggregation.
struct LossGraph {
  ExprNode root;
  std::string branch_name;
};

struct MultiBranchLoss {
  std::vector<LossGraph> branches;
};

inline bool structurally_equal(const LossGraph& a, const LossGraph& b) {
  return structurally_equal(a.root, b.root);
}

inline bool structurally_equal(const MultiBranchLoss& a, const MultiBranchLoss& b) {
  if (a.branches.size() != b.branches.size()) return false;
  for (std::size_t i = 0; i < a.branches.size(); ++i) {
    if (!structurally_equal(a.branches[i], b.branches[i])) return false;
  }
  return true;
}

inline int node_count(const LossGraph& g) { return node_count(g.root); }

inline bool validate(const LossGraph& g) { return validate_node(g.root); }

inline bool contains_leaf(const ExprNode& n, LeafKind k) {
  if (n.is_leaf) return n.leaf == k;
  for (const ExprNode& c : n.children) {
    if (contains_leaf(c, k)) return true;
  }
  return false;
}

// Leaves whose values depend on the prediction being optimized.
inline bool depends_on_prediction(const ExprNode& n) {
  if (n.is_leaf) {
    return n.leaf == LeafKind::YHat || n.leaf == LeafKind::BoxI ||
           n.leaf == LeafKind::BoxU || n.leaf == LeafKind::BoxE;
  }
  for (const ExprNode& c : n.children) {
    if (depends_on_prediction(c)) return true;
  }
  return false;
}

inline bool depends_on_prediction(const LossGraph& g) {
  return depends_on_prediction(g.root);
}

// ---------------------------------------------------------------------------
// Evaluation

struct LeafBindings {
  std::array<const Tensor4*, 6> slot{};  // indexed by LeafKind; One unused

  void bind(LeafKind k, const Tensor4& t) { slot[std::size_t(k)] = &t; }
  const Tensor4* get(LeafKind k) const { return slot[std::size_t(k)]; }

  Dims dims() const {
    for (const Tensor4* t : slot) {
      if (t) return t->dims();
    }
    throw std::invalid_argument("LeafBindings: no tensor bound");
  }
};

inline LeafBindings bind_prediction_target(const Tensor4& yhat, const Tensor4& y) {
  require_same_dims(yhat, y, "eval");
  LeafBindings b;
  b.bind(LeafKind::YHat, yhat);
  b.bind(LeafKind::Y, y);
  return b;
}

// Flattened post-order view of a graph plus reusable per-node buffers, so the
// rejection protocol's 500-step descent does not allocate per step.
class GraphEvaluator {
 public:
  explicit GraphEvaluator(const LossGraph& g) { compile(g.root); }
  explicit GraphEvaluator(const ExprNode& root) { compile(root); }

  // Evaluates the tree; the returned reference stays valid until the next call.
  const Tensor4& forward(const LeafBindings& b) {
    prepare(b.dims());
    const std::size_t count = nodes_.size();
    for (std::size_t i = 0; i < count; ++i) {
      const Node& node = nodes_[i];
      Tensor4& dst = out_[i];
      if (node.is_leaf) {
        if (node.leaf == LeafKind::One) {
          dst = ones_;
        } else {
          const Tensor4* src = b.get(node.leaf);
          if (!src) {
            throw std::invalid_argument("eval: leaf '" + std::string(leaf_name(node.leaf)) +
                                        "' has no bound tensor");
          }
          require_same_dims(*src, ones_, "eval");
          dst = *src;
        }
        continue;
      }
      switch (node.op) {
        case OpKind::Add:
        case OpKind::Mul:
          map_binary_into(out_[node.child[0]], out_[node.child[1]],
                          node.op == OpKind::Add ? BinaryOp::Add : BinaryOp::Mul, dst);
          break;
        case OpKind::MeanNhw:
          aggregate_into(out_[node.child[0]], AggregateMode::MeanNHW, dst);
          break;
        case OpKind::MeanC:
          aggregate_into(out_[node.child[0]], AggregateMode::MeanC, dst);
          break;
        case OpKind::MaxPool:
          pool3x3_into(out_[node.child[0]], PoolMode::Max, dst);
          break;
        case OpKind::MinPool:
          pool3x3_into(out_[node.child[0]], PoolMode::Min, dst);
          break;
        default:
          map_unary_into(out_[node.child[0]], to_unary(node.op), dst);
          break;
      }
    }
    forward_done_ = true;
    return out_.back();
  }

  // Reverse sweep seeded with a constant upstream value per output element.
  // Seed 1/(N*H*W) gives the gradient of the normalized loss value; seed 1
  // gives the gradient of the raw output sum. Accumulates into leaf_grad().
  void backward(double seed) {
    if (!forward_done_) throw std::logic_error("backward before forward");
    const std::size_t count = nodes_.size();
    for (std::size_t i = 0; i < count; ++i) {
      Tensor4& a = adj_[i];
      std::fill(a.data(), a.data() + a.size(), 0.0);
    }
    for (auto& g : leaf_grad_) {
      if (g) std::fill(g->data(), g->data() + g->size(), 0.0);
    }
    Tensor4& root_adj = adj_.back();
    std::fill(root_adj.data(), root_adj.data() + root_adj.size(), seed);

    for (std::size_t ri = count; ri-- > 0;) {
      const Node& node = nodes_[ri];
      const Tensor4& up = adj_[ri];
      if (node.is_leaf) {
        if (node.leaf == LeafKind::One) continue;
        Tensor4& g = *leaf_grad_[std::size_t(node.leaf)];
        for (std::int64_t i = 0; i < g.size(); ++i) g[i] += up[i];
        continue;
      }
      switch (node.op) {
        case OpKind::Add: {
          Tensor4& ga = adj_[node.child[0]];
          Tensor4& gb = adj_[node.child[1]];
          for (std::int64_t i = 0; i < up.size(); ++i) {
            ga[i] += up[i];
            gb[i] += up[i];
          }
          break;
        }
        case OpKind::Mul: {
          const Tensor4& xa = out_[node.child[0]];
          const Tensor4& xb = out_[node.child[1]];
          Tensor4& ga = adj_[node.child[0]];
          Tensor4& gb = adj_[node.child[1]];
          for (std::int64_t i = 0; i < up.size(); ++i) {
            ga[i] += up[i] * xb[i];
            gb[i] += up[i] * xa[i];
          }
          break;
        }
        case OpKind::MeanNhw:
          aggregate_backward_into(out_[node.child[0]], AggregateMode::MeanNHW, up,
                                  adj_[node.child[0]]);
          break;
        case OpKind::MeanC:
          aggregate_backward_into(out_[node.child[0]], AggregateMode::MeanC, up,
                                  adj_[node.child[0]]);
          break;
        case OpKind::MaxPool:
          pool3x3_backward_into(out_[node.child[0]], PoolMode::Max, up, adj_[node.child[0]]);
          break;
        case OpKind::MinPool:
          pool3x3_backward_into(out_[node.child[0]], PoolMode::Min, up, adj_[node.child[0]]);
          break;
        default: {
          const Tensor4& x = out_[node.child[0]];
          Tensor4& gx = adj_[node.child[0]];
          const UnaryOp u = to_unary(node.op);
          for (std::int64_t i = 0; i < up.size(); ++i) {
            gx[i] += up[i] * unary_derivative(u, x[i]);
          }
          break;
        }
      }
    }
  }

  // Gradient accumulated by the last backward() for a leaf kind; null when the
  // graph has no such leaf.
  const Tensor4* leaf_grad(LeafKind k) const {
    return leaf_grad_[std::size_t(k)] ? &*leaf_grad_[std::size_t(k)] : nullptr;
  }

 private:
  struct Node {
    bool is_leaf;
    LeafKind leaf;
    OpKind op;
    int child[2] = {-1, -1};
  };

  static UnaryOp to_unary(OpKind op) {
    switch (op) {
      case OpKind::Neg: return UnaryOp::Neg;
      case OpKind::Abs: return UnaryOp::Abs;
      case OpKind::Inv: return UnaryOp::Inv;
      case OpKind::Log: return UnaryOp::Log;
      case OpKind::Exp: return UnaryOp::Exp;
      case OpKind::Tanh: return UnaryOp::Tanh;
      case OpKind::Square: return UnaryOp::Square;
      case OpKind::Sqrt: return UnaryOp::Sqrt;
      default: throw std::logic_error("not a unary op");
    }
  }

  int compile(const ExprNode& n) {
    Node node;
    node.is_leaf = n.is_leaf;
    node.leaf = n.leaf;
    node.op = n.op;
    if (!n.is_leaf) {
      if (int(n.children.size()) != arity(n.op)) {
        throw std::invalid_argument("eval: operator '" + std::string(op_name(n.op)) +
                                    "' has wrong child count");
      }
      for (std::size_t i = 0; i < n.children.size(); ++i) {
        node.child[i] = compile(n.children[i]);
      }
    } else if (n.leaf != LeafKind::One) {
      used_leaves_[std::size_t(n.leaf)] = true;
    }
    nodes_.push_back(node);
    return int(nodes_.size()) - 1;
  }

  void prepare(Dims dims) {
    if (prepared_ && dims == ones_.dims()) return;
    ones_ = Tensor4::ones(dims);
    out_.assign(nodes_.size(), Tensor4(dims));
    adj_.assign(nodes_.size(), Tensor4(dims));
    for (std::size_t k = 0; k < leaf_grad_.size(); ++k) {
      leaf_grad_[k] = used_leaves_[k] ? std::optional<Tensor4>(Tensor4(dims)) : std::nullopt;
    }
    prepared_ = true;
  }

  std::vector<Node> nodes_;
  std::array<bool, 6> used_leaves_{};
  std::array<std::optional<Tensor4>, 6> leaf_grad_;
  std::vector<Tensor4> out_;
  std::vector<Tensor4> adj_;
  Tensor4 ones_;
  bool prepared_ = false;
  bool forward_done_ = false;
};

inline Tensor4 eval_output(const LossGraph& g, const Tensor4& yhat, const Tensor4& y) {
  GraphEvaluator ev(g);
  return ev.forward(bind_prediction_target(yhat, y));
}

// Scalar loss: sum of the output tensor divided by N*H*W. The channel axis is
// summed but not normalized.
inline double loss_value_from_output(const Tensor4& o) {
  const Dims d = o.dims();
  return o.sum() / (double(d.n) * d.h * d.w);
}

inline double loss_value(const LossGraph& g, const Tensor4& yhat, const Tensor4& y) {
  return loss_value_from_output(eval_output(g, yhat, y));
}

struct BranchInput {
  Tensor4 yhat;
  Tensor4 y;
};

// Weighted sum of per-branch loss values; weights default to 1.
inline double total_loss(const MultiBranchLoss& m, const std::vector<BranchInput>& inputs,
                         const std::vector<double>& weights = {}) {
  if (inputs.size() != m.branches.size()) {
    throw std::invalid_argument("total_loss: expected " + std::to_string(m.branches.size()) +
                                " branch inputs, got " + std::to_string(inputs.size()));
  }
  if (!weights.empty() && weights.size() != m.branches.size()) {
    throw std::invalid_argument("total_loss: weight count does not match branch count");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < m.branches.size(); ++i) {
    const double w = weights.empty() ? 1.0 : weights[i];
    total += w * loss_value(m.branches[i], inputs[i].yhat, inputs[i].y);
  }
  return total;
}

// Gradient of loss_value with respect to the prediction tensor. Graphs with
// no prediction leaf yield all zeros.
inline Tensor4 grad_wrt_prediction(const LossGraph& g, const Tensor4& yhat, const Tensor4& y) {
  GraphEvaluator ev(g);
  const LeafBindings b = bind_prediction_target(yhat, y);
  ev.forward(b);
  const Dims d = yhat.dims();
  ev.backward(1.0 / (double(d.n) * d.h * d.w));
  const Tensor4* grad = ev.leaf_grad(LeafKind::YHat);
  return grad ? *grad : Tensor4::zeros(d);
}

// ---------------------------------------------------------------------------
// Random construction

struct LeafVocab {
  std::vector<LeafKind> kinds;

  static LeafVocab classification() {
    return {{LeafKind::Y, LeafKind::YHat, LeafKind::One}};
  }
  static LeafVocab box_regression() {
    return {{LeafKind::BoxI, LeafKind::BoxU, LeafKind::BoxE, LeafKind::One}};
  }
};

inline OpKind random_op(std::mt19937_64& rng) {
  return kAllOps[std::uniform_int_distribution<int>(0, kOpCount - 1)(rng)];
}

inline LeafKind random_leaf(const LeafVocab& vocab, std::mt19937_64& rng) {
  return vocab.kinds[std::uniform_int_distribution<std::size_t>(0, vocab.kinds.size() - 1)(rng)];
}

namespace detail {
inline ExprNode random_subtree(int level, int depth, const LeafVocab& vocab,
                               std::mt19937_64& rng) {
  if (level > depth) return ExprNode::make_leaf(random_leaf(vocab, rng));
  const OpKind op = random_op(rng);
  std::vector<ExprNode> children;
  children.reserve(arity(op));
  for (int i = 0; i < arity(op); ++i) {
    children.push_back(random_subtree(level + 1, depth, vocab, rng));
  }
  return ExprNode::make_op(op, std::move(children));
}
}  // namespace detail

// Every root-to-leaf path of the result has exactly `depth` operator nodes.
inline LossGraph random_graph(int depth, const LeafVocab& vocab, std::mt19937_64& rng,
                              std::string branch_name = "") {
  if (depth < 1) throw std::invalid_argument("random_graph: depth must be >= 1");
  return LossGraph{detail::random_subtree(1, depth, vocab, rng), std::move(branch_name)};
}

// ---------------------------------------------------------------------------
// Structural hashing

namespace detail {
inline std::uint64_t hash_combine(std::uint64_t seed, std::uint64_t v) {
  return seed ^ (v + 0x9e3779b97f4a7c15ULL + (seed << 12) + (seed >> 4));
}

inline std::uint64_t hash_node(const ExprNode& n) {
  std::uint64_t h = n.is_leaf ? (0x1000 + std::uint64_t(n.leaf)) : (0x2000 + std::uint64_t(n.op));
  h *= 0xff51afd7ed558ccdULL;
  for (const ExprNode& c : n.children) h = hash_combine(h, hash_node(c));
  return h;
}
}  // namespace detail

// Order-sensitive: add(a,b) and add(b,a) may hash differently. Semantic
// duplicates are the gradient fingerprint's job.
inline std::uint64_t structural_hash(const LossGraph& g) {
  return detail::hash_node(g.root);
}

inline std::uint64_t structural_hash(const MultiBranchLoss& m) {
  std::uint64_t h = 0x9ae16a3b2f90404fULL;
  for (const LossGraph& g : m.branches) h = detail::hash_combine(h, structural_hash(g));
  return h;
}

// ---------------------------------------------------------------------------
// Simplification

namespace detail {
// Conservative: only expressions that are nonnegative for any input tensor.
inline bool nonnegative_by_construction(const ExprNode& n) {
  if (n.is_leaf) {
    return n.leaf == LeafKind::One || n.leaf == LeafKind::BoxI || n.leaf == LeafKind::BoxU ||
           n.leaf == LeafKind::BoxE;
  }
  switch (n.op) {
    case OpKind::Abs:
    case OpKind::Square:
    case OpKind::Exp:
      return true;
    case OpKind::Neg:
    case OpKind::Log:
      return false;
    default:
      for (const ExprNode& c : n.children) {
        if (!nonnegative_by_construction(c)) return false;
      }
      return true;
  }
}

inline bool is_one_leaf(const ExprNode& n) { return n.is_leaf && n.leaf == LeafKind::One; }

inline ExprNode simplify_node(const ExprNode& n) {
  if (n.is_leaf) return n;
  std::vector<ExprNode> children;
  children.reserve(n.children.size());
  for (const ExprNode& c : n.children) children.push_back(simplify_node(c));

  if (n.op == OpKind::Square && is_one_leaf(children[0])) {
    return ExprNode::make_leaf(LeafKind::One);
  }
  if (n.op == OpKind::Abs && !children[0].is_leaf && children[0].op == OpKind::Abs) {
    return children[0];
  }
  if (n.op == OpKind::Neg && !children[0].is_leaf && children[0].op == OpKind::Neg) {
    return children[0].children[0];
  }
  if (n.op == OpKind::Abs && nonnegative_by_construction(children[0])) {
    return children[0];
  }
  if (n.op == OpKind::Mul) {
    if (is_one_leaf(children[1])) return children[0];
    if (is_one_leaf(children[0])) return children[1];
  }
  return ExprNode::make_op(n.op, std::move(children));
}
}  // namespace detail

// Applies the fixed local rewrite set until fixpoint. No algebraic
// cancellation beyond these rules; semantics preserved up to eps-level
// differences in the guarded operators.
inline LossGraph simplify(const LossGraph& g) {
  ExprNode cur = g.root;
  for (;;) {
    ExprNode next = detail::simplify_node(cur);
    if (structurally_equal(next, cur)) break;
    cur = std::move(next);
  }
  return LossGraph{std::move(cur), g.branch_name};
}

// ---------------------------------------------------------------------------
// Text formula format: prefix function calls, e.g. "mul(neg(y), log(yhat))".

class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t position, const std::string& message)
      : std::runtime_error("parse error at " + std::to_string(position) + ": " + message),
        position_(position) {}
  std::size_t position() const { return position_; }

 private:
  std::size_t position_;
};

inline void format_node(const ExprNode& n, std::string& out) {
  if (n.is_leaf) {
    out += leaf_name(n.leaf);
    return;
  }
  out += op_name(n.op);
  out += '(';
  for (std::size_t i = 0; i < n.children.size(); ++i) {
    if (i) out += ", ";
    format_node(n.children[i], out);
  }
  out += ')';
}

inline std::string format_formula(const LossGraph& g) {
  std::string out;
  format_node(g.root, out);
  return out;
}

namespace detail {
class FormulaParser {
 public:
  explicit FormulaParser(std::string_view text) : text_(text) {}

  ExprNode parse() {
    ExprNode root = parse_expr();
    skip_ws();
    if (pos_ != text_.size()) throw ParseError(pos_, "trailing input");
    return root;
  }

 private:
  void skip_ws() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  std::optional<OpKind> lookup_op(std::string_view name) const {
    for (OpKind op : kAllOps) {
      if (op_name(op) == name) return op;
    }
    return std::nullopt;
  }

  std::optional<LeafKind> lookup_leaf(std::string_view name) const {
    for (LeafKind k : {LeafKind::Y, LeafKind::YHat, LeafKind::One, LeafKind::BoxI,
                       LeafKind::BoxU, LeafKind::BoxE}) {
      if (leaf_name(k) == name) return k;
    }
    if (name == "1") return LeafKind::One;
    return std::nullopt;
  }

  ExprNode parse_expr() {
    skip_ws();
    const std::size_t start = pos_;
    while (pos_ < text_.size() &&
           (std::isalnum(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_')) {
      ++pos_;
    }
    if (pos_ == start) {
      throw ParseError(start, pos_ < text_.size()
                                  ? "unexpected character '" + std::string(1, text_[pos_]) + "'"
                                  : "unexpected end of input");
    }
    const std::string_view name = text_.substr(start, pos_ - start);
    skip_ws();

    const bool has_args = pos_ < text_.size() && text_[pos_] == '(';
    if (!has_args) {
      if (auto leaf = lookup_leaf(name)) return ExprNode::make_leaf(*leaf);
      if (lookup_op(name)) throw ParseError(start, "operator '" + std::string(name) +
                                                       "' requires arguments");
      throw ParseError(start, "unknown symbol '" + std::string(name) + "'");
    }

    const auto op = lookup_op(name);
    if (!op) throw ParseError(start, "unknown operator '" + std::string(name) + "'");
    ++pos_;  // '('
    std::vector<ExprNode> children;
    children.push_back(parse_expr());
    skip_ws();
    while (pos_ < text_.size() && text_[pos_] == ',') {
      ++pos_;
      children.push_back(parse_expr());
      skip_ws();
    }
    if (pos_ >= text_.size() || text_[pos_] != ')') {
      throw ParseError(pos_, "expected ')'");
    }
    ++pos_;
    if (int(children.size()) != arity(*op)) {
      throw ParseError(start, "operator '" + std::string(name) + "' expects " +
                                  std::to_string(arity(*op)) + " argument(s), got " +
                                  std::to_string(children.size()));
    }
    return ExprNode::make_op(*op, std::move(children));
  }

  std::string_view text_;
  std::size_t pos_ = 0;
};
}  // namespace detail

inline LossGraph parse_formula(std::string_view text, std::string branch_name = "") {
  detail::FormulaParser parser(text);
  return LossGraph{parser.parse(), std::move(branch_name)};
}

}  // namespace lossforge
