#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "adnn/analysis.hpp"
#include "adnn/error.hpp"
#include "adnn/factor.hpp"
#include "adnn/format.hpp"
#include "adnn/market_data.hpp"
#include "adnn/random.hpp"

namespace adnn::gp {

using market::DayBatch;

enum class Op : std::uint8_t {
  Const,
  Open,
  High,
  Low,
  Close,
  Volume,
  Neg,
  Abs,
  Shift,
  TsMean,
  TsStd,
  Delta,
  Add,
  Sub,
  Mul,
  Div,
  Max,
  Min,
};

inline constexpr std::array<int, 4> kAllowedK = {1, 3, 5, 10};
inline constexpr std::array<Op, 5> kSeriesLeaves = {Op::Open, Op::High, Op::Low, Op::Close, Op::Volume};
inline constexpr std::array<Op, 6> kUnaryOps = {Op::Neg, Op::Abs, Op::Shift, Op::TsMean, Op::TsStd, Op::Delta};
inline constexpr std::array<Op, 6> kBinaryOps = {Op::Add, Op::Sub, Op::Mul, Op::Div, Op::Max, Op::Min};
inline constexpr double kConstRange = 5.0;
inline constexpr double kDivGuard = 1e-10;

inline int arity(Op op) {
  if (op <= Op::Volume) return 0;
  if (op <= Op::Delta) return 1;
  return 2;
}
inline bool takes_k(Op op) { return op == Op::Shift || op == Op::TsMean || op == Op::TsStd || op == Op::Delta; }
inline bool commutative(Op op) { return op == Op::Add || op == Op::Mul || op == Op::Max || op == Op::Min; }

inline std::string_view op_name(Op op) {
  switch (op) {
    case Op::Const: return "const";
    case Op::Open: return "open";
    case Op::High: return "high";
    case Op::Low: return "low";
    case Op::Close: return "close";
    case Op::Volume: return "volume";
    case Op::Neg: return "neg";
    case Op::Abs: return "abs";
    case Op::Shift: return "shift";
    case Op::TsMean: return "ts_mean";
    case Op::TsStd: return "ts_std";
    case Op::Delta: return "delta";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Div: return "div";
    case Op::Max: return "max";
    case Op::Min: return "min";
  }
  return "?";
}

inline std::size_t series_slot(Op op) { return static_cast<std::size_t>(op) - static_cast<std::size_t>(Op::Open); }

struct Node {
  Op op = Op::Const;
  double value = 0.0;  // Const only
  int k = 0;           // shift / ts_* / delta only

  friend bool operator==(const Node&, const Node&) = default;
};

/// Expression tree in prefix order; every subtree is a contiguous span.
struct Expr {
  std::vector<Node> nodes;

  static Expr leaf(Op series) { return Expr{{Node{series, 0.0, 0}}}; }
  static Expr constant(double v) { return Expr{{Node{Op::Const, v, 0}}}; }
  static Expr unary(Op op, const Expr& child, int k = 0) {
    Expr e{{Node{op, 0.0, k}}};
    e.nodes.insert(e.nodes.end(), child.nodes.begin(), child.nodes.end());
    return e;
  }
  static Expr binary(Op op, const Expr& a, const Expr& b) {
    Expr e{{Node{op, 0.0, 0}}};
    e.nodes.insert(e.nodes.end(), a.nodes.begin(), a.nodes.end());
    e.nodes.insert(e.nodes.end(), b.nodes.begin(), b.nodes.end());
    return e;
  }

  std::size_t size() const { return nodes.size(); }
  friend bool operator==(const Expr&, const Expr&) = default;
};

/// One past the last node of the subtree rooted at `i`.
inline std::size_t subtree_end(const std::vector<Node>& nodes, std::size_t i) {
  std::size_t pending = 1;
  while (pending > 0) {
    if (i >= nodes.size()) throw Error("malformed expression");
    pending += static_cast<std::size_t>(arity(nodes[i].op));
    --pending;
    ++i;
  }
  return i;
}

inline Expr subtree(const Expr& e, std::size_t i) {
  return Expr{{e.nodes.begin() + static_cast<std::ptrdiff_t>(i),
               e.nodes.begin() + static_cast<std::ptrdiff_t>(subtree_end(e.nodes, i))}};
}

inline Expr replace_subtree(const Expr& e, std::size_t i, const Expr& with) {
  const std::size_t end = subtree_end(e.nodes, i);
  Expr out;
  out.nodes.reserve(e.size() - (end - i) + with.size());
  out.nodes.insert(out.nodes.end(), e.nodes.begin(), e.nodes.begin() + static_cast<std::ptrdiff_t>(i));
  out.nodes.insert(out.nodes.end(), with.nodes.begin(), with.nodes.end());
  out.nodes.insert(out.nodes.end(), e.nodes.begin() + static_cast<std::ptrdiff_t>(end), e.nodes.end());
  return out;
}

/// Depth of each node (root = 1).
inline std::vector<std::size_t> node_depths(const Expr& e) {
  std::vector<std::size_t> depth(e.size());
  std::vector<std::pair<std::size_t, int>> stack;  // (depth, children still expected)
  for (std::size_t i = 0; i < e.size(); ++i) {
    depth[i] = stack.empty() ? 1 : stack.back().first + 1;
    if (!stack.empty() && --stack.back().second == 0) stack.pop_back();
    while (!stack.empty() && stack.back().second == 0) stack.pop_back();
    const int a = arity(e.nodes[i].op);
    if (a > 0) stack.emplace_back(depth[i], a);
  }
  return depth;
}

inline std::size_t depth(const Expr& e) {
  const auto d = node_depths(e);
  return d.empty() ? 0 : *std::max_element(d.begin(), d.end());
}

namespace detail {

inline std::size_t lookback_at(const std::vector<Node>& nodes, std::size_t& i) {
  const Node& n = nodes.at(i++);
  switch (arity(n.op)) {
    case 0: return 0;
    case 1: {
      const std::size_t c = lookback_at(nodes, i);
      const auto k = static_cast<std::size_t>(n.k);
      if (n.op == Op::Shift || n.op == Op::Delta) return c + k;
      if (n.op == Op::TsMean || n.op == Op::TsStd) return c + k - 1;
      return c;
    }
    default: {
      const std::size_t a = lookback_at(nodes, i);
      const std::size_t b = lookback_at(nodes, i);
      return std::max(a, b);
    }
  }
}

}  // namespace detail

/// Days of history beyond today the expression reads.
inline std::size_t lookback(const Expr& e) {
  std::size_t i = 0;
  return detail::lookback_at(e.nodes, i);
}

/// Structural check; returns an empty string when valid.
inline std::string check(const Expr& e, std::size_t max_depth, std::size_t max_lookback) {
  if (e.nodes.empty()) return "empty expression";
  try {
    if (subtree_end(e.nodes, 0) != e.size()) return "trailing nodes";
  } catch (const Error&) {
    return "missing children";
  }
  for (const auto& n : e.nodes) {
    if (takes_k(n.op)) {
      if (std::find(kAllowedK.begin(), kAllowedK.end(), n.k) == kAllowedK.end()) {
        return "k must be one of 1, 3, 5, 10";
      }
    } else if (n.k != 0) {
      return "unexpected k on " + std::string(op_name(n.op));
    }
    if (n.op == Op::Const && !(std::abs(n.value) <= kConstRange)) return "constant outside [-5, 5]";
  }
  if (depth(e) > max_depth) return "depth exceeds " + std::to_string(max_depth);
  if (lookback(e) > max_lookback) return "lookback exceeds " + std::to_string(max_lookback);
  return "";
}

// ---------------------------------------------------------------- text form

inline std::string to_string(const Expr& e);

namespace detail {

inline void print_at(const std::vector<Node>& nodes, std::size_t& i, std::string& out) {
  const Node& n = nodes.at(i++);
  if (n.op == Op::Const) {
    out += format_exact(n.value);
    return;
  }
  if (arity(n.op) == 0) {
    out += op_name(n.op);
    return;
  }
  out += '(';
  out += op_name(n.op);
  for (int c = 0; c < arity(n.op); ++c) {
    out += ' ';
    print_at(nodes, i, out);
  }
  if (takes_k(n.op)) {
    out += ' ';
    out += std::to_string(n.k);
  }
  out += ')';
}

struct Parser {
  std::string_view text;
  std::size_t pos = 0;

  [[noreturn]] void fail(const std::string& what) const {
    throw UserError("expression parse error at " + std::to_string(pos) + ": " + what);
  }
  void skip() {
    while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos]))) ++pos;
  }
  std::string_view atom() {
    skip();
    const std::size_t start = pos;
    while (pos < text.size() && text[pos] != '(' && text[pos] != ')' &&
           !std::isspace(static_cast<unsigned char>(text[pos]))) {
      ++pos;
    }
    if (pos == start) fail("expected a token");
    return text.substr(start, pos - start);
  }
  static std::optional<Op> lookup(std::string_view name) {
    for (int o = 0; o <= static_cast<int>(Op::Min); ++o) {
      const auto op = static_cast<Op>(o);
      if (op != Op::Const && op_name(op) == name) return op;
    }
    return std::nullopt;
  }
  void parse(std::vector<Node>& out) {
    skip();
    if (pos >= text.size()) fail("unexpected end");
    if (text[pos] == ')') fail("unexpected ')'");
    if (text[pos] != '(') {
      const auto tok = atom();
      if (auto op = lookup(tok); op && arity(*op) == 0) {
        out.push_back({*op, 0.0, 0});
        return;
      }
      const auto v = parse_double(tok);
      if (!v) fail("unknown leaf '" + std::string(tok) + "'");
      out.push_back({Op::Const, *v, 0});
      return;
    }
    ++pos;
    const auto name = atom();
    const auto op = lookup(name);
    if (!op || arity(*op) == 0) fail("unknown operator '" + std::string(name) + "'");
    const std::size_t at = out.size();
    out.push_back({*op, 0.0, 0});
    for (int c = 0; c < arity(*op); ++c) parse(out);
    if (takes_k(*op)) {
      const auto tok = atom();
      const auto v = parse_double(tok);
      if (!v || *v != std::floor(*v)) fail("expected integer k");
      out[at].k = static_cast<int>(*v);
    }
    skip();
    if (pos >= text.size() || text[pos] != ')') fail("expected ')'");
    ++pos;
  }
};

}  // namespace detail

inline std::string to_string(const Expr& e) {
  std::string out;
  std::size_t i = 0;
  detail::print_at(e.nodes, i, out);
  return out;
}

/// Parses the S-expression form, e.g. `(div (sub high low) (shift volume 1))`.
inline Expr parse_expr(std::string_view text, std::size_t max_depth = 64,
                       std::size_t max_lookback = std::numeric_limits<std::size_t>::max()) {
  detail::Parser p{text};
  Expr e;
  p.parse(e.nodes);
  p.skip();
  if (p.pos != text.size()) p.fail("trailing characters");
  if (auto err = check(e, max_depth, max_lookback); !err.empty()) throw UserError("invalid expression: " + err);
  return e;
}

/// Canonical form: children of commutative operators sorted by their text.
inline Expr normalize(const Expr& e) {
  if (e.nodes.empty()) return e;
  const Node& root = e.nodes[0];
  const int a = arity(root.op);
  if (a == 0) return e;
  if (a == 1) return Expr::unary(root.op, normalize(subtree(e, 1)), root.k);
  const std::size_t second = subtree_end(e.nodes, 1);
  Expr l = normalize(subtree(e, 1));
  Expr r = normalize(subtree(e, second));
  if (commutative(root.op) && to_string(r) < to_string(l)) std::swap(l, r);
  return Expr::binary(root.op, l, r);
}

// --------------------------------------------------------------- evaluation

namespace detail {

using Block = Eigen::ArrayXXd;  // (stocks, lags); column 0 is the batch day

inline Block eval_at(const std::vector<Node>& nodes, std::size_t& i, const DayBatch& b, std::size_t need) {
  const Node& n = nodes[i++];
  const auto m = static_cast<Eigen::Index>(b.size());
  const auto cols = static_cast<Eigen::Index>(need);
  switch (n.op) {
    case Op::Const: return Block::Constant(m, cols, n.value);
    case Op::Open:
    case Op::High:
    case Op::Low:
    case Op::Close:
    case Op::Volume: {
      Block out(m, cols);
      const std::size_t s = series_slot(n.op);
      for (Eigen::Index r = 0; r < m; ++r) {
        for (Eigen::Index c = 0; c < cols; ++c) {
          out(r, c) = b.value(static_cast<std::size_t>(r), s, static_cast<std::size_t>(c));
        }
      }
      return out;
    }
    case Op::Neg: return -eval_at(nodes, i, b, need);
    case Op::Abs: return eval_at(nodes, i, b, need).abs();
    case Op::Shift: {
      const Block c = eval_at(nodes, i, b, need + static_cast<std::size_t>(n.k));
      return c.rightCols(cols);
    }
    case Op::Delta: {
      const Block c = eval_at(nodes, i, b, need + static_cast<std::size_t>(n.k));
      return c.leftCols(cols) - c.rightCols(cols);
    }
    case Op::TsMean:
    case Op::TsStd: {
      const auto k = static_cast<Eigen::Index>(n.k);
      const Block c = eval_at(nodes, i, b, need + static_cast<std::size_t>(k) - 1);
      Block out(m, cols);
      for (Eigen::Index col = 0; col < cols; ++col) {
        const auto win = c.middleCols(col, k);
        const Eigen::ArrayXd mean = win.rowwise().mean();
        if (n.op == Op::TsMean) {
          out.col(col) = mean;
        } else {
          out.col(col) = ((win.colwise() - mean).square().rowwise().sum() / static_cast<double>(k)).sqrt();
        }
      }
      return out;
    }
    default: break;
  }
  const Block a = eval_at(nodes, i, b, need);
  const Block c = eval_at(nodes, i, b, need);
  switch (n.op) {
    case Op::Add: return a + c;
    case Op::Sub: return a - c;
    case Op::Mul: return a * c;
    case Op::Div: return (c.abs() < kDivGuard).select(Block::Ones(m, cols), a / c);
    case Op::Max: return a.max(c);
    case Op::Min: return a.min(c);
    default: throw Error("unhandled operator");
  }
}

}  // namespace detail

/// Value of the expression on the batch day for every stock. Series leaves
/// read the standardized window; non-finite results are replaced by 0.
inline std::vector<double> eval_expr(const Expr& e, const DayBatch& b) {
  if (e.nodes.empty()) throw UserError("empty expression");
  const std::size_t lb = lookback(e);
  if (lb + 1 > b.window()) {
    throw UserError("expression lookback " + std::to_string(lb) + " exceeds window " +
                    std::to_string(b.window()));
  }
  std::size_t i = 0;
  const auto block = detail::eval_at(e.nodes, i, b, 1);
  std::vector<double> out(b.size());
  for (std::size_t r = 0; r < out.size(); ++r) {
    const double v = block(static_cast<Eigen::Index>(r), 0);
    out[r] = std::isfinite(v) ? v : 0.0;
  }
  return out;
}

inline Factor expr_factor(const Expr& e, std::string name = {}) {
  if (name.empty()) name = to_string(e);
  return Factor{std::move(name), [e](const DayBatch& b) { return eval_expr(e, b); }};
}

// ---------------------------------------------------------------- variation

namespace detail {

inline Node random_leaf(Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  if (u(rng) < 0.8) {
    std::uniform_int_distribution<std::size_t> pick(0, kSeriesLeaves.size() - 1);
    return {kSeriesLeaves[pick(rng)], 0.0, 0};
  }
  std::uniform_real_distribution<double> c(-kConstRange, kConstRange);
  return {Op::Const, c(rng), 0};
}

/// A k for `op` that fits in `budget` extra lookback days, or 0 if none.
inline int random_k(Op op, std::size_t budget, Rng& rng) {
  std::vector<int> ok;
  for (int k : kAllowedK) {
    const auto cost = static_cast<std::size_t>(op == Op::TsMean || op == Op::TsStd ? k - 1 : k);
    if (cost <= budget) ok.push_back(k);
  }
  if (ok.empty()) return 0;
  std::uniform_int_distribution<std::size_t> pick(0, ok.size() - 1);
  return ok[pick(rng)];
}

inline std::size_t k_cost(Op op, int k) {
  if (op == Op::Shift || op == Op::Delta) return static_cast<std::size_t>(k);
  if (op == Op::TsMean || op == Op::TsStd) return static_cast<std::size_t>(k - 1);
  return 0;
}

inline void grow(std::vector<Node>& out, Rng& rng, std::size_t depth_left, bool full, std::size_t budget) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  if (depth_left <= 1 || (!full && u(rng) < 0.3)) {
    out.push_back(random_leaf(rng));
    return;
  }
  constexpr std::size_t kFunctions = kUnaryOps.size() + kBinaryOps.size();
  std::uniform_int_distribution<std::size_t> pick(0, kFunctions - 1);
  for (;;) {
    const std::size_t f = pick(rng);
    if (f >= kUnaryOps.size()) {
      out.push_back({kBinaryOps[f - kUnaryOps.size()], 0.0, 0});
      grow(out, rng, depth_left - 1, full, budget);
      grow(out, rng, depth_left - 1, full, budget);
      return;
    }
    const Op op = kUnaryOps[f];
    int k = 0;
    if (takes_k(op)) {
      k = random_k(op, budget, rng);
      if (k == 0) continue;
    }
    out.push_back({op, 0.0, k});
    grow(out, rng, depth_left - 1, full, budget - k_cost(op, k));
    return;
  }
}

inline std::size_t random_index(const Expr& e, Rng& rng) {
  std::uniform_int_distribution<std::size_t> pick(0, e.size() - 1);
  return pick(rng);
}

}  // namespace detail

/// Ramped half-and-half draw: "full" or "grow" with equal odds, depth
/// uniform in [min(2, max_depth), max_depth]. Lookback stays within budget.
inline Expr random_expr(Rng& rng, std::size_t max_depth, std::size_t max_lookback = 29) {
  if (max_depth < 1) throw UserError("max_depth must be >= 1");
  std::uniform_int_distribution<std::size_t> d(std::min<std::size_t>(2, max_depth), max_depth);
  std::bernoulli_distribution full(0.5);
  const std::size_t target = d(rng);
  Expr e;
  detail::grow(e.nodes, rng, target, full(rng), max_lookback);
  return e;
}

/// Replaces every internal node at depth == max_depth with one of its leaves.
inline Expr trim_depth(const Expr& e, std::size_t max_depth, Rng& rng) {
  Expr out = e;
  for (;;) {
    const auto depths = node_depths(out);
    std::size_t at = out.size();
    for (std::size_t i = 0; i < out.size(); ++i) {
      if (depths[i] >= max_depth && arity(out.nodes[i].op) > 0) {
        at = i;
        break;
      }
    }
    if (at == out.size()) return out;
    const std::size_t end = subtree_end(out.nodes, at);
    std::vector<Node> leaves;
    for (std::size_t i = at; i < end; ++i) {
      if (arity(out.nodes[i].op) == 0) leaves.push_back(out.nodes[i]);
    }
    std::uniform_int_distribution<std::size_t> pick(0, leaves.size() - 1);
    out = replace_subtree(out, at, Expr{{leaves[pick(rng)]}});
  }
}

/// Subtree exchange at uniformly chosen points, then depth trimming.
inline std::pair<Expr, Expr> crossover(const Expr& a, const Expr& b, Rng& rng, std::size_t max_depth = 6) {
  const std::size_t ia = detail::random_index(a, rng);
  const std::size_t ib = detail::random_index(b, rng);
  Expr ca = replace_subtree(a, ia, subtree(b, ib));
  Expr cb = replace_subtree(b, ib, subtree(a, ia));
  return {trim_depth(ca, max_depth, rng), trim_depth(cb, max_depth, rng)};
}

/// Point mutation or subtree replacement, chosen with equal odds.
inline Expr mutate(const Expr& a, Rng& rng, std::size_t max_depth = 6, std::size_t max_lookback = 29) {
  const std::size_t i = detail::random_index(a, rng);
  std::bernoulli_distribution point(0.5);
  if (point(rng)) {
    Node n = a.nodes[i];
    if (arity(n.op) == 0) {
      n = detail::random_leaf(rng);
    } else if (arity(n.op) == 2) {
      std::uniform_int_distribution<std::size_t> pick(0, kBinaryOps.size() - 1);
      n.op = kBinaryOps[pick(rng)];
    } else {
      const std::size_t used = lookback(a);
      const std::size_t slack = max_lookback >= used ? max_lookback - used : 0;
      std::uniform_int_distribution<std::size_t> pick(0, kUnaryOps.size() - 1);
      const Op op = kUnaryOps[pick(rng)];
      const int k = takes_k(op) ? detail::random_k(op, slack + detail::k_cost(n.op, n.k), rng) : 0;
      if (!takes_k(op) || k != 0) n = {op, 0.0, k};
    }
    Expr out = a;
    out.nodes[i] = n;
    return out;
  }
  const auto depths = node_depths(a);
  const std::size_t room = max_depth >= depths[i] ? max_depth - depths[i] + 1 : 1;
  Expr fresh = random_expr(rng, room, max_lookback);
  Expr out = trim_depth(replace_subtree(a, i, fresh), max_depth, rng);
  return lookback(out) > max_lookback ? a : out;
}

// ---------------------------------------------------------------- evolution

struct GpConfig {
  std::size_t population = 200;
  std::size_t generations = 30;
  std::size_t tournament = 5;
  double crossover_prob = 0.7;
  double mutation_prob = 0.2;
  std::size_t elitism = 5;
  std::size_t max_depth = 6;
  /// Training days used for fitness; 0 = all of them.
  std::size_t fitness_days = 0;
  std::uint64_t seed = 1;
  std::size_t workers = 1;

  void validate() const {
    if (!(crossover_prob >= 0.0 && crossover_prob <= 1.0) || !(mutation_prob >= 0.0 && mutation_prob <= 1.0)) {
      throw UserError("gp probabilities must be in [0, 1]");
    }
    if (tournament < 1) throw UserError("gp tournament size must be >= 1");
    if (population < tournament) throw UserError("gp population must be >= tournament size");
    if (elitism > population) throw UserError("gp elitism exceeds population");
    if (max_depth < 1) throw UserError("gp max_depth must be >= 1");
  }
};

struct ScoredExpr {
  Expr expr;
  double train_ic = 0.0;
  double val_ic = 0.0;
  double test_ic = std::numeric_limits<double>::quiet_NaN();
};

struct EvolveResult {
  /// Deduplicated final population, best validation IC first.
  std::vector<ScoredExpr> ranked;
  /// Best training fitness after each generation (index 0 = initial population).
  std::vector<double> best_fitness;
};

inline double fitness(const Expr& e, std::span<const DayBatch> days) {
  return analysis::evaluate_factor(expr_factor(e, "gp"), days).mean;
}

namespace detail {

inline std::vector<const DayBatch*> evenly_spaced(const std::vector<DayBatch>& all, std::size_t count) {
  std::vector<const DayBatch*> out;
  if (count == 0 || count >= all.size()) {
    for (const auto& b : all) out.push_back(&b);
    return out;
  }
  for (std::size_t i = 0; i < count; ++i) out.push_back(&all[i * all.size() / count]);
  return out;
}

}  // namespace detail

using GenerationFn = std::function<void(std::size_t generation, double best)>;

/// Tournament-selection GP with elitism. Fitness is mean exact-Spearman IC
/// over a fixed set of training days, so elites never lose fitness.
inline EvolveResult evolve(const std::vector<DayBatch>& train, const std::vector<DayBatch>& val,
                           const std::vector<DayBatch>& test, const GpConfig& cfg,
                           const GenerationFn& on_generation = {}) {
  cfg.validate();
  if (train.empty()) throw UserError("gp: no eligible training days");
  if (val.empty()) throw UserError("gp: no eligible validation days");
  const std::size_t window = train.front().window();
  const std::size_t max_lb = window - 1;

  std::vector<DayBatch> fit_days;
  for (const auto* b : detail::evenly_spaced(train, cfg.fitness_days)) fit_days.push_back(*b);

  std::map<std::string, double> cache;
  auto score_all = [&](const std::vector<Expr>& pop) {
    std::vector<std::string> keys(pop.size());
    std::vector<std::size_t> todo;
    for (std::size_t i = 0; i < pop.size(); ++i) {
      keys[i] = to_string(normalize(pop[i]));
      if (!cache.count(keys[i])) {
        cache.emplace(keys[i], 0.0);
        todo.push_back(i);
      }
    }
    std::vector<double> fresh(todo.size());
    std::atomic<std::size_t> next{0};
    auto work = [&] {
      for (std::size_t j = next++; j < todo.size(); j = next++) fresh[j] = fitness(pop[todo[j]], fit_days);
    };
    const std::size_t w = std::max<std::size_t>(1, std::min(cfg.workers, todo.size()));
    if (w <= 1) {
      work();
    } else {
      std::vector<std::thread> pool;
      for (std::size_t t = 0; t < w; ++t) pool.emplace_back(work);
      for (auto& t : pool) t.join();
    }
    for (std::size_t j = 0; j < todo.size(); ++j) cache[keys[todo[j]]] = fresh[j];
    std::vector<double> out(pop.size());
    for (std::size_t i = 0; i < pop.size(); ++i) out[i] = cache[keys[i]];
    return out;
  };

  std::vector<Expr> pop;
  pop.reserve(cfg.population);
  for (std::size_t i = 0; i < cfg.population; ++i) {
    Rng rng(derive_seed(cfg.seed, {0, i}));
    pop.push_back(random_expr(rng, cfg.max_depth, max_lb));
  }
  auto fit = score_all(pop);

  EvolveResult res;
  auto best_of = [](const std::vector<double>& f) { return *std::max_element(f.begin(), f.end()); };
  res.best_fitness.push_back(best_of(fit));
  if (on_generation) on_generation(0, res.best_fitness.back());

  for (std::size_t gen = 1; gen <= cfg.generations; ++gen) {
    std::vector<std::size_t> order(pop.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return fit[a] > fit[b]; });

    std::vector<Expr> next;
    next.reserve(cfg.population);
    for (std::size_t e = 0; e < cfg.elitism; ++e) next.push_back(pop[order[e]]);

    for (std::size_t idx = next.size(); idx < cfg.population; ++idx) {
      Rng rng(derive_seed(cfg.seed, {gen, idx}));
      auto select = [&] {
        std::uniform_int_distribution<std::size_t> pick(0, pop.size() - 1);
        std::size_t best = pick(rng);
        for (std::size_t t = 1; t < cfg.tournament; ++t) {
          const std::size_t c = pick(rng);
          if (fit[c] > fit[best] || (fit[c] == fit[best] && c < best)) best = c;
        }
        return best;
      };
      std::uniform_real_distribution<double> u(0.0, 1.0);
      const double r = u(rng);
      const std::size_t parent = select();
      Expr child;
      if (r < cfg.crossover_prob) {
        const std::size_t other = select();
        child = crossover(pop[parent], pop[other], rng, cfg.max_depth).first;
      } else if (r < cfg.crossover_prob + cfg.mutation_prob) {
        child = mutate(pop[parent], rng, cfg.max_depth, max_lb);
      } else {
        child = pop[parent];
      }
      if (lookback(child) > max_lb) child = pop[parent];
      next.push_back(std::move(child));
    }
    pop = std::move(next);
    fit = score_all(pop);
    res.best_fitness.push_back(best_of(fit));
    if (on_generation) on_generation(gen, res.best_fitness.back());
  }

  std::map<std::string, std::size_t> seen;
  for (std::size_t i = 0; i < pop.size(); ++i) {
    const Expr canon = normalize(pop[i]);
    const auto key = to_string(canon);
    if (seen.count(key)) continue;
    seen.emplace(key, res.ranked.size());
    ScoredExpr s;
    s.expr = canon;
    s.train_ic = fit[i];
    s.val_ic = analysis::evaluate_factor(expr_factor(canon), val).mean;
    if (!test.empty()) s.test_ic = analysis::evaluate_factor(expr_factor(canon), test).mean;
    res.ranked.push_back(std::move(s));
  }
  std::stable_sort(res.ranked.begin(), res.ranked.end(), [](const ScoredExpr& a, const ScoredExpr& b) {
    if (a.val_ic != b.val_ic) return a.val_ic > b.val_ic;
    if (a.train_ic != b.train_ic) return a.train_ic > b.train_ic;
    return to_string(a.expr) < to_string(b.expr);
  });
  return res;
}

inline EvolveResult evolve(const market::Dataset& data, const GpConfig& cfg, const GenerationFn& on_generation = {}) {
  return evolve(data.batches(market::Segment::Train), data.batches(market::Segment::Validation),
                data.batches(market::Segment::Test), cfg, on_generation);
}

}  // namespace adnn::gp
