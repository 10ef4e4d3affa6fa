#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "roarbench/attribution.hpp"
#include "roarbench/mask.hpp"
#include "roarbench/pipeline.hpp"

namespace roarbench {

struct RegressionResult {
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
  std::size_t n_points = 0;
};

// Ordinary least squares y = slope * x + intercept; R^2 = 1 - SS_res / SS_tot,
// reported as 0 when y is constant. Needs n >= 3 and non-constant x.
RegressionResult linear_fit(std::span<const std::pair<double, double>> points);

inline constexpr const char* kCsvHeader = "dataset,method,postproc,drop_rate,trial,accuracy,mask_tv,mode,seed";

std::string format_csv(std::span<const RunRecord> records);
std::vector<RunRecord> parse_csv(const std::string& text);
void write_csv(std::span<const RunRecord> records, const std::filesystem::path& path);
std::vector<RunRecord> read_csv(const std::filesystem::path& path);

// Binary P5, min-max scaled to [0, 255]; a constant image maps to 128. The
// scale is kept in a "# scale min=... max=..." header comment.
std::vector<std::uint8_t> encode_pgm(std::span<const double> values, std::size_t height, std::size_t width);
void write_pgm(std::span<const double> values, std::size_t height, std::size_t width,
               const std::filesystem::path& path);
void write_pgm(const AttributionMap& map, const std::filesystem::path& path);
void write_pgm(const Mask& mask, const std::filesystem::path& path);

// key=value lines; '#' starts a comment. Keys are returned without dashes.
std::map<std::string, std::string> parse_config(const std::string& text);
std::map<std::string, std::string> load_config(const std::filesystem::path& path);

// One fit of mean accuracy against mean mask TV per drop rate, over the
// plain (unfiltered) cells of every method.
std::map<double, RegressionResult> tv_accuracy_fits(std::span<const RunRecord> records);

// Command-line entry point. Returns 0 on success, 1 on usage errors and 2 on
// runtime failures.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace roarbench
