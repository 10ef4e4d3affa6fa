#include "roarbench/mioracle.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <numeric>
#include <limits>
#include <sstream>

#include "roarbench/error.hpp"

namespace roarbench::mi {

namespace {

constexpr double kWorldTol = 1e-12;
constexpr double kJointTol = 1e-9;

std::size_t ipow(std::size_t b, int e) {
  std::size_t r = 1;
  for (int i = 0; i < e; ++i) r *= b;
  return r;
}

std::size_t factorial(int n) {
  std::size_t r = 1;
  for (int i = 2; i <= n; ++i) r *= static_cast<std::size_t>(i);
  return r;
}

// Pixel vector after replacing the first t pixels of `order` by `levels`,
// encoded in base levels + 1.
std::uint64_t dropped_code(const World& w, std::size_t x, const Ranking& order, int t) {
  std::vector<int> px = w.decode_x(x);
  for (int i = 0; i < t; ++i) px[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = w.levels;
  std::uint64_t code = 0;
  for (int v : px) code = code * static_cast<std::uint64_t>(w.levels + 1) + static_cast<std::uint64_t>(v);
  return code;
}

struct Atom {
  std::size_t x;
  int y, e;
  double p;
};

std::vector<Atom> atoms(const World& w) {
  std::vector<Atom> out;
  for (std::size_t x = 0; x < w.num_x(); ++x) {
    for (int y = 0; y < w.classes; ++y) {
      const double pxy = w.p_xy[x * static_cast<std::size_t>(w.classes) + static_cast<std::size_t>(y)];
      if (pxy <= 0.0) continue;
      for (std::size_t e = 0; e < w.p_explainer.size(); ++e) {
        if (w.p_explainer[e] <= 0.0) continue;
        out.push_back({x, y, static_cast<int>(e), pxy * w.p_explainer[e]});
      }
    }
  }
  return out;
}

std::uint64_t value_of(const World& w, const Coarsening& k, const Atom& a, Var v) {
  const Ranking& r = w.rank[static_cast<std::size_t>(a.e)][a.x];
  switch (v) {
    case Var::X: return a.x;
    case Var::Y: return static_cast<std::uint64_t>(a.y);
    case Var::E: return static_cast<std::uint64_t>(a.e);
    case Var::A: return ranking_id(r);
    case Var::ATilde: return k.image.at(ranking_id(r));
    case Var::XPrime: return dropped_code(w, a.x, r, w.drop);
    case Var::XTildePrime: return dropped_code(w, a.x, rankings(w.pixels)[k.image.at(ranking_id(r))], w.drop);
  }
  return 0;
}

using Key = std::vector<std::uint64_t>;

Key key_of(const World& w, const Coarsening& k, const Atom& a, std::span<const Var> vars) {
  Key key;
  key.reserve(vars.size());
  for (Var v : vars) key.push_back(value_of(w, k, a, v));
  return key;
}

// I(U; V | W = w) for every w, with p(w).
std::map<Key, std::pair<double, double>> mi_by_condition(const World& w, const Coarsening& k,
                                                         std::span<const Var> u, std::span<const Var> v,
                                                         std::span<const Var> cond) {
  std::map<Key, double> pw;
  std::map<std::pair<Key, Key>, double> pwu, pwv;
  std::map<std::tuple<Key, Key, Key>, double> pwuv;
  for (const Atom& a : atoms(w)) {
    Key kw = key_of(w, k, a, cond), ku = key_of(w, k, a, u), kv = key_of(w, k, a, v);
    pw[kw] += a.p;
    pwu[{kw, ku}] += a.p;
    pwv[{kw, kv}] += a.p;
    pwuv[{kw, ku, kv}] += a.p;
  }
  std::map<Key, std::pair<double, double>> out;
  for (const auto& [kw, p] : pw) out[kw] = {p, 0.0};
  for (const auto& [key, p] : pwuv) {
    const auto& [kw, ku, kv] = key;
    const double ratio = p * pw[kw] / (pwu[{kw, ku}] * pwv[{kw, kv}]);
    out[kw].second += p / pw[kw] * std::log2(ratio);
  }
  for (auto& [kw, entry] : out) entry.second = std::max(0.0, entry.second);
  return out;
}

void check_joint(const Joint& j) {
  double total = 0.0;
  std::size_t cols = 0;
  for (const auto& row : j.p) {
    if (cols == 0) cols = row.size();
    if (row.size() != cols) throw InvalidInput("joint table rows differ in length");
    for (double v : row) {
      if (!(v >= 0.0) || !std::isfinite(v)) throw InvalidInput("joint table has a negative or non-finite entry");
      total += v;
    }
  }
  if (std::abs(total - 1.0) > kJointTol) {
    throw InvalidInput("joint table sums to " + std::to_string(total) + ", not 1");
  }
}

std::string trim_comment(const std::string& line) {
  const auto pos = line.find('#');
  return pos == std::string::npos ? line : line.substr(0, pos);
}

}  // namespace

std::size_t World::num_x() const { return ipow(static_cast<std::size_t>(levels), pixels); }

std::vector<int> World::decode_x(std::size_t x_index) const {
  std::vector<int> px(static_cast<std::size_t>(pixels));
  for (int i = pixels - 1; i >= 0; --i) {
    px[static_cast<std::size_t>(i)] = static_cast<int>(x_index % static_cast<std::size_t>(levels));
    x_index /= static_cast<std::size_t>(levels);
  }
  return px;
}

void World::validate() const {
  if (pixels < 1 || pixels > 6) throw InvalidInput("worlds need 1 to 6 pixels");
  if (levels < 2 || levels > 9) throw InvalidInput("pixel levels must lie in [2, 9]");
  if (classes < 1) throw InvalidInput("worlds need at least one class");
  if (drop < 0 || drop > pixels) throw InvalidInput("drop must lie in [0, pixels]");
  if (p_explainer.empty()) throw InvalidInput("worlds need at least one explainer");
  if (p_xy.size() != num_x() * static_cast<std::size_t>(classes)) throw InvalidInput("p(x, y) has the wrong size");
  auto check_dist = [](std::span<const double> p, const char* what) {
    double s = 0.0;
    for (double v : p) {
      if (!(v >= 0.0)) throw InvalidInput(std::string(what) + " has a negative entry");
      s += v;
    }
    if (std::abs(s - 1.0) > kWorldTol) throw InvalidInput(std::string(what) + " does not sum to 1");
  };
  check_dist(p_explainer, "p(e)");
  check_dist(p_xy, "p(x, y)");
  if (rank.size() != p_explainer.size()) throw InvalidInput("one ranking table per explainer is required");
  for (const auto& table : rank) {
    if (table.size() != num_x()) throw InvalidInput("ranking table must cover every x");
    for (const auto& r : table) {
      std::vector<int> sorted = r;
      std::sort(sorted.begin(), sorted.end());
      std::vector<int> expect(static_cast<std::size_t>(pixels));
      std::iota(expect.begin(), expect.end(), 0);
      if (sorted != expect) throw InvalidInput("every ranking must be a permutation of the pixels");
    }
  }
}

const std::vector<Ranking>& rankings(int n) {
  static std::mutex mu;
  static std::map<int, std::vector<Ranking>> cache;
  if (n < 1 || n > 8) throw InvalidInput("rankings supports 1 to 8 pixels");
  std::lock_guard lock(mu);
  auto it = cache.find(n);
  if (it == cache.end()) {
    std::vector<Ranking> all;
    Ranking r(static_cast<std::size_t>(n));
    std::iota(r.begin(), r.end(), 0);
    do all.push_back(r);
    while (std::next_permutation(r.begin(), r.end()));
    it = cache.emplace(n, std::move(all)).first;
  }
  return it->second;
}

std::size_t ranking_id(const Ranking& r) {
  // Lehmer code, which matches lexicographic order.
  const std::size_t n = r.size();
  std::size_t id = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t smaller = 0;
    for (std::size_t j = i + 1; j < n; ++j) smaller += r[j] < r[i] ? 1 : 0;
    id = id * (n - i) + smaller;
  }
  return id;
}

Coarsening Coarsening::identity(int pixels) {
  Coarsening k;
  k.image.resize(factorial(pixels));
  std::iota(k.image.begin(), k.image.end(), std::size_t{0});
  return k;
}

Coarsening Coarsening::constant(int pixels, std::size_t id) {
  const std::size_t n = factorial(pixels);
  if (id >= n) throw InvalidInput("ranking id out of range");
  return Coarsening{std::vector<std::size_t>(n, id)};
}

double entropy(std::span<const double> p) {
  double h = 0.0;
  for (double v : p) {
    if (v < 0.0) throw InvalidInput("probabilities must be non-negative");
    if (v > 0.0) h -= v * std::log2(v);
  }
  return std::max(0.0, h);
}

double mutual_information(const Joint& joint) {
  check_joint(joint);
  if (joint.p.empty()) return 0.0;
  const std::size_t cols = joint.p.front().size();
  std::vector<double> pu(joint.p.size(), 0.0), pv(cols, 0.0);
  for (std::size_t i = 0; i < joint.p.size(); ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      pu[i] += joint.p[i][j];
      pv[j] += joint.p[i][j];
    }
  }
  double mi = 0.0;
  for (std::size_t i = 0; i < joint.p.size(); ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      const double p = joint.p[i][j];
      if (p > 0.0) mi += p * std::log2(p / (pu[i] * pv[j]));
    }
  }
  return std::max(0.0, mi);
}

double bayes_accuracy(const Joint& joint) {
  check_joint(joint);
  double acc = 0.0;
  for (const auto& row : joint.p) {
    if (!row.empty()) acc += *std::max_element(row.begin(), row.end());
  }
  return acc;
}

double conditional_mi(const World& w, const Coarsening& k, std::span<const Var> u, std::span<const Var> v,
                      std::span<const Var> cond) {
  w.validate();
  if (k.image.size() != factorial(w.pixels)) throw InvalidInput("coarsening does not match the ranking alphabet");
  double total = 0.0;
  for (const auto& [key, entry] : mi_by_condition(w, k, u, v, cond)) total += entry.first * entry.second;
  return std::max(0.0, total);
}

double conditional_mi(const World& w, const Coarsening& k, Var u, Var v) {
  const Var us[] = {u}, vs[] = {v};
  return conditional_mi(w, k, us, vs, {});
}

double conditional_mi(const World& w, const Coarsening& k, Var u, Var v, Var cond) {
  const Var us[] = {u}, vs[] = {v}, cs[] = {cond};
  return conditional_mi(w, k, us, vs, cs);
}

Joint modified_variable(const World& w, const Coarsening& k, int t) {
  w.validate();
  if (t < 0 || t > w.pixels) throw InvalidInput("t must lie in [0, pixels]");
  if (k.image.size() != factorial(w.pixels)) throw InvalidInput("coarsening does not match the ranking alphabet");
  const auto& all = rankings(w.pixels);
  std::map<std::uint64_t, std::vector<double>> rows;
  for (const Atom& a : atoms(w)) {
    const Ranking& r = all[k.image[ranking_id(w.rank[static_cast<std::size_t>(a.e)][a.x])]];
    auto& row = rows[dropped_code(w, a.x, r, t)];
    row.resize(static_cast<std::size_t>(w.classes), 0.0);
    row[static_cast<std::size_t>(a.y)] += a.p;
  }
  Joint j;
  for (auto& [code, row] : rows) j.p.push_back(std::move(row));
  return j;
}

DpiReport dpi_check(const World& w, const Coarsening& k, double tol) {
  w.validate();
  if (k.image.size() != factorial(w.pixels)) throw InvalidInput("coarsening does not match the ranking alphabet");
  const Var e[] = {Var::E}, a[] = {Var::A}, at[] = {Var::ATilde}, x[] = {Var::X};
  DpiReport r;
  r.lhs_given_x.assign(w.num_x(), 0.0);
  r.rhs_given_x.assign(w.num_x(), 0.0);
  for (const auto& [key, entry] : mi_by_condition(w, k, e, a, x)) {
    r.lhs += entry.first * entry.second;
    r.lhs_given_x[key[0]] = entry.second;
  }
  for (const auto& [key, entry] : mi_by_condition(w, k, e, at, x)) {
    r.rhs += entry.first * entry.second;
    r.rhs_given_x[key[0]] = entry.second;
  }
  r.holds = r.rhs <= r.lhs + tol;
  for (std::size_t i = 0; i < w.num_x(); ++i) r.holds = r.holds && r.rhs_given_x[i] <= r.lhs_given_x[i] + tol;
  return r;
}

ConjectureReport conjecture_search(const World& w, std::size_t budget) {
  w.validate();
  const std::size_t R = factorial(w.pixels);
  std::vector<std::size_t> support;
  for (const Atom& a : atoms(w)) support.push_back(ranking_id(w.rank[static_cast<std::size_t>(a.e)][a.x]));
  std::sort(support.begin(), support.end());
  support.erase(std::unique(support.begin(), support.end()), support.end());

  ConjectureReport rep;
  rep.domain_size = support.size();
  const Coarsening id = Coarsening::identity(w.pixels);
  const Joint plain = modified_variable(w, id, w.drop);
  rep.mi_plain = mutual_information(plain);
  rep.bayes_plain = bayes_accuracy(plain);
  rep.mi_e_plain = conditional_mi(w, id, Var::E, Var::XPrime, Var::X);

  std::vector<std::size_t> digits(support.size(), 0);
  Coarsening k = id;
  rep.exhausted = true;
  while (true) {
    if (rep.examined == budget) {
      rep.exhausted = false;
      break;
    }
    for (std::size_t i = 0; i < support.size(); ++i) k.image[support[i]] = digits[i];
    ++rep.examined;
    const Joint tilde = modified_variable(w, k, w.drop);
    const double mi_tilde = mutual_information(tilde);
    if (rep.mi_plain > mi_tilde + 1e-9) {
      DpiReport dpi = dpi_check(w, k);
      if (dpi.holds) {
        rep.found = true;
        rep.k = k;
        rep.mi_tilde = mi_tilde;
        rep.bayes_tilde = bayes_accuracy(tilde);
        rep.mi_e_tilde = conditional_mi(w, k, Var::E, Var::XTildePrime, Var::X);
        rep.dpi = std::move(dpi);
        return rep;
      }
    }
    // Next tuple in lexicographic order, first support ranking most significant.
    std::size_t i = digits.size();
    while (i > 0 && ++digits[i - 1] == R) digits[--i] = 0;
    if (i == 0) break;
  }
  rep.k = id;
  rep.mi_tilde = rep.mi_plain;
  rep.bayes_tilde = rep.bayes_plain;
  rep.mi_e_tilde = rep.mi_e_plain;
  rep.dpi = dpi_check(w, id);
  return rep;
}

World parse_world(const std::string& text) {
  World w;
  w.pixels = 0;
  bool dims_fixed = false;
  std::istringstream in(text);
  std::string raw;
  std::size_t line_no = 0;
  std::vector<std::vector<std::pair<std::string, Ranking>>> rank_lines;  // per explainer, in order
  auto fail = [&](const std::string& msg) -> ParseError {
    return ParseError(ParseError::Kind::Syntax, line_no, "line " + std::to_string(line_no) + ": " + msg);
  };
  auto fix_dims = [&] {
    if (dims_fixed) return;
    if (w.pixels < 1) throw fail("'pixels' must come first");
    dims_fixed = true;
    w.p_xy.assign(w.num_x() * static_cast<std::size_t>(w.classes), 0.0);
  };

  while (std::getline(in, raw)) {
    ++line_no;
    std::istringstream ls(trim_comment(raw));
    std::string kw;
    if (!(ls >> kw)) continue;
    auto read_int = [&](const char* what) {
      long long v;
      if (!(ls >> v)) throw fail(std::string("expected integer ") + what);
      return static_cast<int>(v);
    };
    auto read_real = [&](const char* what) {
      double v;
      if (!(ls >> v)) throw fail(std::string("expected number ") + what);
      return v;
    };
    if (kw == "pixels" || kw == "levels" || kw == "classes") {
      if (dims_fixed) throw fail("'" + kw + "' must precede prob and rank lines");
      const int v = read_int(kw.c_str());
      if (v < 1 || v > 9) throw fail(kw + " out of range");
      (kw == "pixels" ? w.pixels : kw == "levels" ? w.levels : w.classes) = v;
    } else if (kw == "drop") {
      w.drop = read_int("drop");
    } else if (kw == "explainer") {
      w.p_explainer.push_back(read_real("p(e)"));
      rank_lines.emplace_back();
    } else if (kw == "prob") {
      fix_dims();
      std::size_t x = 0;
      for (int i = 0; i < w.pixels; ++i) {
        const int v = read_int("pixel value");
        if (v < 0 || v >= w.levels) throw fail("pixel value out of range");
        x = x * static_cast<std::size_t>(w.levels) + static_cast<std::size_t>(v);
      }
      const int y = read_int("class");
      if (y < 0 || y >= w.classes) throw fail("class out of range");
      w.p_xy[x * static_cast<std::size_t>(w.classes) + static_cast<std::size_t>(y)] += read_real("probability");
    } else if (kw == "rank") {
      fix_dims();
      const int e = read_int("explainer index");
      if (e < 0 || static_cast<std::size_t>(e) >= rank_lines.size()) throw fail("unknown explainer");
      std::string xs;
      if (!(ls >> xs)) throw fail("expected pixel digits or *");
      if (xs != "*") {
        if (xs.size() != static_cast<std::size_t>(w.pixels)) throw fail("pixel digits do not match 'pixels'");
        for (char c : xs) {
          if (c < '0' || c >= '0' + w.levels) throw fail("bad pixel digit");
        }
      }
      Ranking r;
      for (int i = 0; i < w.pixels; ++i) r.push_back(read_int("pixel index"));
      rank_lines[static_cast<std::size_t>(e)].emplace_back(xs, r);
    } else {
      throw fail("unknown keyword '" + kw + "'");
    }
    std::string extra;
    if (ls >> extra) throw fail("unexpected token '" + extra + "'");
  }
  fix_dims();

  // Later lines win; unranked x default to the identity order.
  Ranking ident(static_cast<std::size_t>(w.pixels));
  std::iota(ident.begin(), ident.end(), 0);
  w.rank.assign(w.p_explainer.size(), std::vector<Ranking>(w.num_x(), ident));
  for (std::size_t e = 0; e < rank_lines.size(); ++e) {
    for (const auto& [xs, r] : rank_lines[e]) {
      if (xs == "*") {
        std::fill(w.rank[e].begin(), w.rank[e].end(), r);
      } else {
        std::size_t x = 0;
        for (char c : xs) x = x * static_cast<std::size_t>(w.levels) + static_cast<std::size_t>(c - '0');
        w.rank[e][x] = r;
      }
    }
  }
  w.validate();
  return w;
}

std::string format_world(const World& w) {
  std::ostringstream out;
  out.precision(17);
  out << "pixels " << w.pixels << "\nlevels " << w.levels << "\nclasses " << w.classes << "\ndrop " << w.drop
      << "\n";
  for (double p : w.p_explainer) out << "explainer " << p << "\n";
  for (std::size_t x = 0; x < w.num_x(); ++x) {
    for (int y = 0; y < w.classes; ++y) {
      const double p = w.p_xy[x * static_cast<std::size_t>(w.classes) + static_cast<std::size_t>(y)];
      if (p <= 0.0) continue;
      out << "prob";
      for (int v : w.decode_x(x)) out << " " << v;
      out << " " << y << " " << p << "\n";
    }
  }
  for (std::size_t e = 0; e < w.rank.size(); ++e) {
    for (std::size_t x = 0; x < w.num_x(); ++x) {
      out << "rank " << e << " ";
      for (int v : w.decode_x(x)) out << v;
      for (int i : w.rank[e][x]) out << " " << i;
      out << "\n";
    }
  }
  return out.str();
}

World default_world() {
  // Pixels 0 and 1 both copy the label; pixel 2 is an independent coin.
  // Both explainers put pixel 2 first, so dropping two pixels still leaves
  // one copy of the label. Moving the ranking onto the redundant pair
  // removes it.
  static const char* kText = R"(pixels 3
levels 2
classes 2
drop 2
explainer 0.5
explainer 0.5
prob 0 0 0 0 0.25
prob 0 0 1 0 0.25
prob 1 1 0 1 0.25
prob 1 1 1 1 0.25
rank 0 * 2 0 1
rank 1 * 2 1 0
)";
  return parse_world(kText);
}

std::string format_report(const World& w, const ConjectureReport& r) {
  std::ostringstream out;
  out.precision(6);
  out << std::fixed;
  out << "search: " << r.examined << " coarsenings examined over " << r.domain_size << " support rankings"
      << (r.exhausted ? "" : " (budget exhausted, partial)") << "\n";
  out << "I(X';Y) = " << r.mi_plain << " bits, bayes accuracy " << r.bayes_plain << "\n";
  out << "I(E;X'|X) = " << r.mi_e_plain << " bits\n";
  if (!r.found) {
    out << "witness: none\n";
    return out.str();
  }
  const auto& all = rankings(w.pixels);
  out << "witness k:";
  for (std::size_t id = 0; id < r.k.image.size(); ++id) {
    if (r.k.image[id] == id) continue;
    out << " [";
    for (int i : all[id]) out << i;
    out << "->";
    for (int i : all[r.k.image[id]]) out << i;
    out << "]";
  }
  out << "\n";
  out << "I(X~';Y) = " << r.mi_tilde << " bits, bayes accuracy " << r.bayes_tilde << "\n";
  out << "I(E;X~'|X) = " << r.mi_e_tilde << " bits\n";
  out << "DPI: I(E;A|X) = " << r.dpi.lhs << " >= I(E;A~|X) = " << r.dpi.rhs << (r.dpi.holds ? " holds" : " VIOLATED")
      << "\n";
  return out.str();
}

World random_world(Rng& rng, const RandomWorldLimits& limits) {
  auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  World w;
  w.pixels = pick(2, limits.max_pixels);
  w.levels = pick(2, limits.max_levels);
  w.classes = pick(2, limits.max_classes);
  w.drop = pick(0, w.pixels);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int ne = pick(1, limits.max_explainers);
  double s = 0.0;
  for (int e = 0; e < ne; ++e) s += w.p_explainer.emplace_back(u(rng) + 0.05);
  for (auto& p : w.p_explainer) p /= s;
  w.p_xy.resize(w.num_x() * static_cast<std::size_t>(w.classes));
  s = 0.0;
  // About a third of the cells are zero so supports vary.
  for (auto& p : w.p_xy) s += (p = u(rng) < 0.35 ? 0.0 : u(rng));
  if (s == 0.0) s += (w.p_xy[0] = 1.0);
  for (auto& p : w.p_xy) p /= s;
  // Renormalise once more against rounding so the world validates at 1e-12.
  const double total = std::accumulate(w.p_xy.begin(), w.p_xy.end(), 0.0);
  for (auto& p : w.p_xy) p /= total;
  const auto& all = rankings(w.pixels);
  std::uniform_int_distribution<std::size_t> rid(0, all.size() - 1);
  w.rank.assign(static_cast<std::size_t>(ne), std::vector<Ranking>(w.num_x()));
  for (auto& table : w.rank) {
    for (auto& r : table) r = all[rid(rng)];
  }
  return w;
}

Coarsening random_coarsening(Rng& rng, int pixels) {
  const std::size_t n = factorial(pixels);
  std::uniform_int_distribution<std::size_t> rid(0, n - 1);
  std::uniform_int_distribution<int> style(0, 9);
  Coarsening k = Coarsening::identity(pixels);
  switch (style(rng)) {
    case 0: return k;
    case 1: return Coarsening::constant(pixels, rid(rng));
    case 2: {
      // Few-valued map: every ranking lands in a small random codebook.
      std::vector<std::size_t> codebook{rid(rng), rid(rng)};
      std::uniform_int_distribution<std::size_t> c(0, codebook.size() - 1);
      for (auto& v : k.image) v = codebook[c(rng)];
      return k;
    }
    default:
      for (auto& v : k.image) v = rid(rng);
      return k;
  }
}

DpiSweep dpi_sweep(std::uint64_t seed, std::size_t pairs, double tol) {
  Rng rng(SeedBuilder(seed).add("dpi-sweep").seed());
  DpiSweep s;
  s.max_excess = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < pairs; ++i) {
    const World w = random_world(rng);
    const Coarsening k = random_coarsening(rng, w.pixels);
    const DpiReport r = dpi_check(w, k, tol);
    ++s.pairs;
    if (!r.holds) ++s.violations;
    s.max_excess = std::max(s.max_excess, r.rhs - r.lhs);
    for (std::size_t x = 0; x < r.lhs_given_x.size(); ++x) {
      s.max_excess = std::max(s.max_excess, r.rhs_given_x[x] - r.lhs_given_x[x]);
    }
  }
  return s;
}

}  // namespace roarbench::mi
