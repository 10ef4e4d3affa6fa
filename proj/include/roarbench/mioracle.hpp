#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "roarbench/rng.hpp"

namespace roarbench::mi {

// Pixel order, most important first.
using Ranking = std::vector<int>;

// A finite world: X is a vector of `pixels` symbols in [0, levels), Y a class,
// E an explainer drawn independently of (X, Y) with probability p_explainer.
// Each explainer ranks the pixels of each x deterministically; dropping the
// top `drop` pixels replaces them with the symbol `levels`.
struct World {
  int pixels = 0;
  int levels = 2;
  int classes = 2;
  int drop = 0;
  std::vector<double> p_explainer;
  std::vector<double> p_xy;                 // [x_index * classes + y], x_index in base `levels`
  std::vector<std::vector<Ranking>> rank;   // [e][x_index]

  std::size_t num_x() const;
  std::vector<int> decode_x(std::size_t x_index) const;
  void validate() const;
};

// All rankings of n pixels in lexicographic order; a Ranking's id is its position.
const std::vector<Ranking>& rankings(int n);
std::size_t ranking_id(const Ranking& r);

// Total map on ranking ids.
struct Coarsening {
  std::vector<std::size_t> image;

  static Coarsening identity(int pixels);
  static Coarsening constant(int pixels, std::size_t id);
};

enum class Var { X, Y, E, A, ATilde, XPrime, XTildePrime };

// A dense joint table p[u][v].
struct Joint {
  std::vector<std::vector<double>> p;
};

double entropy(std::span<const double> p);  // bits
double mutual_information(const Joint& joint);
double bayes_accuracy(const Joint& joint);

// I(U; V | W) in bits over the world's (x, y, e) atoms; W may be empty.
double conditional_mi(const World& w, const Coarsening& k, std::span<const Var> u, std::span<const Var> v,
                      std::span<const Var> cond = {});
double conditional_mi(const World& w, const Coarsening& k, Var u, Var v);
double conditional_mi(const World& w, const Coarsening& k, Var u, Var v, Var cond);

// Joint of (X~', Y) after dropping the top `t` pixels of k(A).
Joint modified_variable(const World& w, const Coarsening& k, int t);

struct DpiReport {
  double lhs = 0.0;  // I(E; A | X)
  double rhs = 0.0;  // I(E; A~ | X)
  std::vector<double> lhs_given_x, rhs_given_x;
  bool holds = false;
};
DpiReport dpi_check(const World& w, const Coarsening& k, double tol = 1e-12);

struct ConjectureReport {
  bool found = false;
  bool exhausted = false;  // false if the budget ran out first
  std::size_t examined = 0;
  std::size_t domain_size = 0;
  Coarsening k;
  double mi_plain = 0.0;  // I(X'; Y)
  double mi_tilde = 0.0;  // I(X~'; Y)
  double bayes_plain = 0.0;
  double bayes_tilde = 0.0;
  double mi_e_plain = 0.0;  // I(E; X' | X)
  double mi_e_tilde = 0.0;  // I(E; X~' | X)
  DpiReport dpi;
};

// Enumerates maps from the rankings that occur with positive probability to
// all rankings (identity elsewhere), in lexicographic order of the image
// tuple, and returns the first k with I(X'; Y) > I(X~'; Y) + 1e-9 and DPI intact.
ConjectureReport conjecture_search(const World& w, std::size_t budget = 1'000'000);

World parse_world(const std::string& text);
std::string format_world(const World& w);
World default_world();
std::string format_report(const World& w, const ConjectureReport& r);

struct RandomWorldLimits {
  int max_pixels = 4;
  int max_levels = 3;
  int max_classes = 3;
  int max_explainers = 3;
};
World random_world(Rng& rng, const RandomWorldLimits& limits = {});
Coarsening random_coarsening(Rng& rng, int pixels);

struct DpiSweep {
  std::size_t pairs = 0;
  std::size_t violations = 0;
  double max_excess = 0.0;  // max of rhs - lhs over all pairs and all x
};
DpiSweep dpi_sweep(std::uint64_t seed, std::size_t pairs, double tol = 1e-12);

}  // namespace roarbench::mi
