#include "roarbench/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <sstream>

#include "roarbench/error.hpp"

namespace roarbench {

namespace {

std::string fixed6(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

void write_bytes(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(path.string(), "cannot open for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError(path.string(), "write failed");
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string(), "cannot open for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

RegressionResult linear_fit(std::span<const std::pair<double, double>> points) {
  const std::size_t n = points.size();
  if (n < 3) throw InvalidInput("linear_fit needs at least 3 points, got " + std::to_string(n));
  double mx = 0.0, my = 0.0;
  for (const auto& [x, y] : points) {
    mx += x;
    my += y;
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (const auto& [x, y] : points) {
    sxx += (x - mx) * (x - mx);
    sxy += (x - mx) * (y - my);
    syy += (y - my) * (y - my);
  }
  if (!(sxx > 0.0)) throw InvalidInput("linear_fit: all x values are equal, slope is undefined");
  RegressionResult r;
  r.n_points = n;
  r.slope = sxy / sxx;
  r.intercept = my - r.slope * mx;
  double ss_res = 0.0;
  for (const auto& [x, y] : points) {
    const double e = y - (r.slope * x + r.intercept);
    ss_res += e * e;
  }
  r.r_squared = syy > 0.0 ? std::clamp(1.0 - ss_res / syy, 0.0, 1.0) : 0.0;
  return r;
}

std::string format_csv(std::span<const RunRecord> records) {
  std::string out = std::string(kCsvHeader) + "\n";
  for (const auto& r : records) {
    out += r.dataset + "," + r.method + "," + r.postproc + "," + fixed6(r.drop_rate) + "," +
           std::to_string(r.trial) + "," + fixed6(r.failed ? std::nan("") : r.accuracy) + "," +
           fixed6(r.mean_mask_tv) + "," + to_string(r.mode) + "," + std::to_string(r.seed) + "\n";
  }
  return out;
}

std::vector<RunRecord> parse_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(in, line) || trim(line) != kCsvHeader) {
    throw ParseError(ParseError::Kind::Syntax, 1, "CSV header does not match the run-record schema");
  }
  std::vector<RunRecord> out;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto f = split(trim(line), ',');
    if (f.size() != 9) {
      throw ParseError(ParseError::Kind::Syntax, line_no,
                       "line " + std::to_string(line_no) + ": expected 9 fields, got " + std::to_string(f.size()));
    }
    RunRecord r;
    try {
      r.dataset = f[0];
      r.method = f[1];
      r.postproc = f[2];
      r.drop_rate = std::stod(f[3]);
      r.trial = std::stoi(f[4]);
      r.accuracy = f[5] == "nan" ? std::nan("") : std::stod(f[5]);
      r.failed = std::isnan(r.accuracy);
      r.mean_mask_tv = std::stod(f[6]);
      r.mode = parse_mode(f[7]);
      r.seed = std::stoull(f[8]);
    } catch (const std::exception& e) {
      throw ParseError(ParseError::Kind::Syntax, line_no, "line " + std::to_string(line_no) + ": " + e.what());
    }
    out.push_back(std::move(r));
  }
  return out;
}

void write_csv(std::span<const RunRecord> records, const std::filesystem::path& path) {
  write_bytes(path, format_csv(records));
}

std::vector<RunRecord> read_csv(const std::filesystem::path& path) { return parse_csv(read_text(path)); }

std::vector<std::uint8_t> encode_pgm(std::span<const double> values, std::size_t height, std::size_t width) {
  if (values.size() != height * width || values.empty()) throw InvalidInput("PGM size does not match the data");
  const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  const double lo = *lo_it, hi = *hi_it;
  char head[160];
  std::snprintf(head, sizeof head, "P5\n# scale min=%.9g max=%.9g\n%zu %zu\n255\n", lo, hi, width, height);
  std::vector<std::uint8_t> out(head, head + std::char_traits<char>::length(head));
  for (double v : values) {
    const double s = hi > lo ? (v - lo) / (hi - lo) * 255.0 : 128.0;
    out.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(s, 0.0, 255.0))));
  }
  return out;
}

void write_pgm(std::span<const double> values, std::size_t height, std::size_t width,
               const std::filesystem::path& path) {
  const auto bytes = encode_pgm(values, height, width);
  write_bytes(path, std::string(bytes.begin(), bytes.end()));
}

void write_pgm(const AttributionMap& map, const std::filesystem::path& path) {
  const AttributionMap flat = reduce_channels(map);
  write_pgm(flat.values, flat.shape[0], flat.shape[1], path);
}

void write_pgm(const Mask& mask, const std::filesystem::path& path) {
  std::vector<double> v(mask.bits.begin(), mask.bits.end());
  write_pgm(v, mask.height, mask.width, path);
}

std::map<std::string, std::string> parse_config(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ParseError(ParseError::Kind::Syntax, line_no, "config line " + std::to_string(line_no) + ": expected key=value");
    }
    std::string key = trim(line.substr(0, eq));
    while (!key.empty() && key.front() == '-') key.erase(key.begin());
    if (key.empty()) throw ParseError(ParseError::Kind::Syntax, line_no, "config line " + std::to_string(line_no) + ": empty key");
    out[key] = trim(line.substr(eq + 1));
  }
  return out;
}

std::map<std::string, std::string> load_config(const std::filesystem::path& path) {
  return parse_config(read_text(path));
}

std::map<double, RegressionResult> tv_accuracy_fits(std::span<const RunRecord> records) {
  std::vector<RunRecord> plain;
  for (const auto& r : records) {
    if (r.postproc == "plain") plain.push_back(r);
  }
  std::map<double, std::vector<std::pair<double, double>>> by_rate;
  for (const auto& [key, row] : aggregate(plain)) by_rate[std::get<2>(key)].emplace_back(row.mean_tv, row.mean_accuracy);
  std::map<double, RegressionResult> fits;
  for (const auto& [t, pts] : by_rate) {
    if (pts.size() >= 3) fits[t] = linear_fit(pts);
  }
  return fits;
}

}  // namespace roarbench
