#include "hfdtm/dataio.hpp"

#include "hfdtm/digest.hpp"
#include "hfdtm/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace hfdtm {

namespace {

using json = nlohmann::json;

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

std::string row_label(std::size_t data_row) { return "row " + std::to_string(data_row); }

}  // namespace

TimePoint parse_timestamp(const std::string& text) {
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, s = 0;
  char sep = 0;
  int consumed = 0;
  const int n = std::sscanf(text.c_str(), "%d-%d-%d%c%d:%d:%d%n", &y, &mo, &d, &sep, &h, &mi, &s, &consumed);
  if (n < 6) {
    throw ValidationError("malformed timestamp '" + text + "'");
  }
  if (n == 6) {
    // HH:MM without seconds
    std::sscanf(text.c_str(), "%d-%d-%d%c%d:%d%n", &y, &mo, &d, &sep, &h, &mi, &consumed);
    s = 0;
  }
  std::string rest = text.substr(static_cast<std::size_t>(consumed));
  if (!(sep == 'T' || sep == ' ') || !(rest.empty() || rest == "Z")) {
    throw ValidationError("malformed timestamp '" + text + "'");
  }
  const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{static_cast<unsigned>(mo)},
                                        std::chrono::day{static_cast<unsigned>(d)}};
  if (!ymd.ok() || h < 0 || h > 23 || mi < 0 || mi > 59 || s < 0 || s > 59) {
    throw ValidationError("malformed timestamp '" + text + "'");
  }
  return std::chrono::sys_days{ymd} + std::chrono::hours{h} + std::chrono::minutes{mi} + std::chrono::seconds{s};
}

std::string format_timestamp(TimePoint t) {
  const auto day = std::chrono::floor<std::chrono::days>(t);
  const std::chrono::year_month_day ymd{day};
  const std::chrono::hh_mm_ss hms{t - day};
  char buf[64];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02ld:%02ld:%02ld", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                static_cast<long>(hms.hours().count()), static_cast<long>(hms.minutes().count()),
                static_cast<long>(hms.seconds().count()));
  return buf;
}

std::size_t hour_of(TimePoint t) {
  const auto day = std::chrono::floor<std::chrono::days>(t);
  return static_cast<std::size_t>(std::chrono::floor<std::chrono::hours>(t - day).count());
}

MovementTable MovementTable::slice_rows(std::size_t begin, std::size_t end) const {
  MovementTable out;
  out.column_ids = column_ids;
  out.timestamps.assign(timestamps.begin() + static_cast<std::ptrdiff_t>(begin),
                        timestamps.begin() + static_cast<std::ptrdiff_t>(end));
  out.counts = counts.middleRows(static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(end - begin));
  return out;
}

void validate_table(const MovementTable& table, bool require_non_negative) {
  if (table.column_ids.size() != table.cols()) {
    throw ValidationError("table has " + std::to_string(table.cols()) + " count columns but " +
                          std::to_string(table.column_ids.size()) + " column ids");
  }
  if (table.timestamps.size() != table.rows()) {
    throw ValidationError("table has " + std::to_string(table.rows()) + " count rows but " +
                          std::to_string(table.timestamps.size()) + " timestamps");
  }
  for (std::size_t r = 0; r < table.rows(); ++r) {
    if (r > 0) {
      const auto step = table.timestamps[r] - table.timestamps[r - 1];
      if (step > kInterval) {
        throw ValidationError(row_label(r + 1) + ": gap in series (" + format_timestamp(table.timestamps[r - 1]) +
                              " -> " + format_timestamp(table.timestamps[r]) + ")");
      }
      if (step != kInterval) {
        throw ValidationError(row_label(r + 1) + ": timestamps must increase in 15-minute steps");
      }
    }
    for (std::size_t c = 0; c < table.cols(); ++c) {
      const double v = table.counts(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
      if (!std::isfinite(v)) {
        throw ValidationError(row_label(r + 1) + ": non-finite count in column " + table.column_ids[c]);
      }
      if (require_non_negative && v < 0.0) {
        throw ValidationError(row_label(r + 1) + ": negative count in column " + table.column_ids[c]);
      }
    }
  }
}

MovementTable load_movement_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open counts file " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ValidationError(path.string() + ": empty file");
  auto header = split_csv_line(trim(line));
  if (header.size() < 2 || trim(header[0]) != "timestamp") {
    throw ValidationError(path.string() + ": header must be 'timestamp,<movement>,...'");
  }
  MovementTable table;
  for (std::size_t i = 1; i < header.size(); ++i) table.column_ids.push_back(trim(header[i]));
  const std::size_t n = table.column_ids.size();

  std::vector<double> values;
  std::size_t data_row = 0;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty()) continue;
    ++data_row;
    const auto fields = split_csv_line(line);
    const std::string where = path.string() + ": " + row_label(data_row);
    if (fields.size() != n + 1) {
      throw ValidationError(where + ": expected " + std::to_string(n + 1) + " fields, got " +
                            std::to_string(fields.size()));
    }
    try {
      table.timestamps.push_back(parse_timestamp(trim(fields[0])));
    } catch (const ValidationError& e) {
      throw ValidationError(where + ": " + e.what());
    }
    for (std::size_t c = 0; c < n; ++c) {
      const std::string f = trim(fields[c + 1]);
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
      if (ec != std::errc() || ptr != f.data() + f.size()) {
        throw ValidationError(where + ": malformed count '" + f + "' in column " + table.column_ids[c]);
      }
      if (v < 0.0) throw ValidationError(where + ": negative count in column " + table.column_ids[c]);
      values.push_back(v);
    }
  }
  table.counts = Eigen::Map<const Matrix>(values.data(), static_cast<Eigen::Index>(data_row),
                                          static_cast<Eigen::Index>(n));
  try {
    validate_table(table);
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
  return table;
}

void write_movement_csv(const MovementTable& table, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << "timestamp";
  for (const auto& id : table.column_ids) out << ',' << id;
  out << '\n';
  char buf[64];
  for (std::size_t r = 0; r < table.rows(); ++r) {
    out << format_timestamp(table.timestamps[r]);
    for (std::size_t c = 0; c < table.cols(); ++c) {
      const double v = table.counts(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
      const auto res = std::to_chars(buf, buf + sizeof buf, v);
      out << ',' << std::string_view(buf, static_cast<std::size_t>(res.ptr - buf));
    }
    out << '\n';
  }
  if (!out) throw ValidationError("failed writing " + path.string());
}

bool CorridorTopology::is_corridor(std::size_t i) const {
  return std::find(corridor_idx.begin(), corridor_idx.end(), i) != corridor_idx.end();
}

bool CorridorTopology::is_active(std::size_t i) const {
  return std::find(active_idx.begin(), active_idx.end(), i) != active_idx.end();
}

void CorridorTopology::validate() const {
  const auto in_range = [&](std::size_t i, const char* what) {
    if (i >= n_movements) {
      throw ValidationError(std::string("topology: ") + what + " index " + std::to_string(i) +
                            " out of range (N = " + std::to_string(n_movements) + ")");
    }
  };
  if (n_movements == 0) throw ValidationError("topology: no movements");
  if (zero_mask.size() != n_movements) throw ValidationError("topology: zero mask length differs from N");
  if (!movement_ids.empty() && movement_ids.size() != n_movements) {
    throw ValidationError("topology: movement id count differs from N");
  }
  for (double m : zero_mask) {
    if (m != 0.0 && m != 1.0) throw ValidationError("topology: zero mask entries must be 0 or 1");
  }
  if (corridor_idx.empty()) throw ValidationError("topology: corridor index set is empty");
  if (active_idx.empty()) throw ValidationError("topology: active index set is empty");
  for (std::size_t i : corridor_idx) in_range(i, "corridor");
  for (std::size_t i : active_idx) {
    in_range(i, "active");
    if (zero_mask[i] == 0.0) {
      throw ValidationError("topology: movement " + std::to_string(i) + " is zero-masked but listed as active");
    }
  }
  for (std::size_t i : corridor_idx) {
    if (!is_active(i)) {
      throw ValidationError("topology: corridor movement " + std::to_string(i) + " is not in the active set");
    }
  }
  if (groups.empty()) throw ValidationError("topology: at least one intersection group is required");
  std::vector<int> seen(n_movements, 0);
  for (std::size_t k = 0; k < groups.size(); ++k) {
    if (groups[k].empty()) throw ValidationError("topology: group " + std::to_string(k) + " is empty");
    for (std::size_t i : groups[k]) {
      in_range(i, "group");
      if (seen[i]++) {
        throw ValidationError("topology: overlapping groups (movement " + std::to_string(i) +
                              " appears more than once)");
      }
    }
  }
  for (std::size_t i = 0; i < n_movements; ++i) {
    if (!seen[i]) throw ValidationError("topology: movement " + std::to_string(i) + " belongs to no group");
  }
}

std::string CorridorTopology::digest() const { return sha256_hex(topology_to_json(*this)); }

CorridorTopology parse_topology(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("topology: invalid JSON: ") + e.what());
  }
  if (!doc.contains("movements") || !doc["movements"].is_array()) {
    throw ValidationError("topology: missing 'movements' array");
  }
  CorridorTopology topo;
  std::map<std::string, std::size_t> group_of;
  const auto& movements = doc["movements"];
  topo.n_movements = movements.size();
  try {
    for (std::size_t i = 0; i < movements.size(); ++i) {
      const auto& m = movements[i];
      const std::string id = m.at("id").get<std::string>();
      const std::string inter = m.at("intersection").get<std::string>();
      const bool corridor = m.value("corridor", false);
      const bool zero = m.value("zero", false);
      const bool active = m.value("active", !zero);
      topo.movement_ids.push_back(id);
      topo.zero_mask.push_back(zero ? 0.0 : 1.0);
      if (corridor) topo.corridor_idx.push_back(i);
      if (active) topo.active_idx.push_back(i);
      auto [it, inserted] = group_of.try_emplace(inter, topo.groups.size());
      if (inserted) {
        topo.groups.emplace_back();
        topo.group_names.push_back(inter);
      }
      topo.groups[it->second].push_back(i);
    }
    if (doc.contains("active")) {
      topo.active_idx = doc["active"].get<std::vector<std::size_t>>();
      std::sort(topo.active_idx.begin(), topo.active_idx.end());
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("topology: ") + e.what());
  }
  topo.validate();
  return topo;
}

CorridorTopology load_topology(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open topology file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return parse_topology(buf.str());
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

std::string topology_to_json(const CorridorTopology& topology) {
  std::vector<std::string> inter(topology.n_movements);
  for (std::size_t k = 0; k < topology.groups.size(); ++k) {
    const std::string name = k < topology.group_names.size() ? topology.group_names[k] : "G" + std::to_string(k + 1);
    for (std::size_t i : topology.groups[k]) inter[i] = name;
  }
  json movements = json::array();
  for (std::size_t i = 0; i < topology.n_movements; ++i) {
    const bool zero = topology.zero_mask[i] == 0.0;
    json m = {{"id", i < topology.movement_ids.size() ? topology.movement_ids[i] : "M" + std::to_string(i)},
              {"intersection", inter[i]},
              {"corridor", topology.is_corridor(i)},
              {"zero", zero}};
    if (topology.is_active(i) == zero) m["active"] = topology.is_active(i);
    movements.push_back(std::move(m));
  }
  return json{{"movements", std::move(movements)}}.dump(2);
}

void write_topology(const CorridorTopology& topology, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << topology_to_json(topology) << '\n';
}

void check_table_matches(const MovementTable& table, const CorridorTopology& topology) {
  if (table.cols() != topology.n_movements) {
    throw ValidationError("counts have " + std::to_string(table.cols()) + " movements but topology has " +
                          std::to_string(topology.n_movements));
  }
  for (std::size_t i = 0; i < table.cols(); ++i) {
    if (i < topology.movement_ids.size() && table.column_ids[i] != topology.movement_ids[i]) {
      throw ValidationError("column " + std::to_string(i + 1) + " is '" + table.column_ids[i] +
                            "' in the counts but '" + topology.movement_ids[i] + "' in the topology");
    }
  }
}

Splits chronological_split(const MovementTable& table, SplitFractions fractions) {
  const double total = fractions.train + fractions.val + fractions.test;
  if (std::abs(total - 1.0) > 1e-9 || fractions.train <= 0 || fractions.val <= 0 || fractions.test <= 0) {
    throw ValidationError("split fractions must be positive and sum to 1");
  }
  const std::size_t m = table.rows();
  if (m < 3) throw ValidationError("split needs at least 3 rows, got " + std::to_string(m));
  // The epsilon keeps products such as 20 * 0.7 from flooring to 13.
  const auto cut = [m](double f) { return static_cast<std::size_t>(std::floor(static_cast<double>(m) * f + 1e-9)); };
  const std::size_t a = cut(fractions.train);
  const std::size_t b = cut(fractions.train + fractions.val);
  if (a == 0 || b <= a || b >= m) throw ValidationError("split of " + std::to_string(m) + " rows leaves an empty part");
  return {table.slice_rows(0, a), table.slice_rows(a, b), table.slice_rows(b, m)};
}

std::string NormalizationParams::digest() const {
  json j = {{"min", min}, {"max", max}};
  return sha256_hex(j.dump());
}

NormalizationParams fit_normalization(const MovementTable& train) {
  if (train.rows() == 0) throw ValidationError("fit_normalization: empty training table");
  NormalizationParams p;
  p.min.resize(train.cols());
  p.max.resize(train.cols());
  for (std::size_t c = 0; c < train.cols(); ++c) {
    p.min[c] = train.counts.col(static_cast<Eigen::Index>(c)).minCoeff();
    p.max[c] = train.counts.col(static_cast<Eigen::Index>(c)).maxCoeff();
  }
  return p;
}

Matrix apply_normalization(const Matrix& values, const NormalizationParams& params) {
  if (static_cast<std::size_t>(values.cols()) != params.cols()) {
    throw ValidationError("normalization: " + std::to_string(values.cols()) + " columns vs " +
                          std::to_string(params.cols()) + " fitted");
  }
  Matrix out(values.rows(), values.cols());
  for (Eigen::Index c = 0; c < values.cols(); ++c) {
    const double lo = params.min[static_cast<std::size_t>(c)];
    const double span = params.max[static_cast<std::size_t>(c)] - lo;
    if (span > 0.0) {
      out.col(c) = (values.col(c).array() - lo) / span;
    } else {
      out.col(c).setZero();
    }
  }
  return out;
}

MovementTable apply_normalization(const MovementTable& table, const NormalizationParams& params) {
  MovementTable out;
  out.timestamps = table.timestamps;
  out.column_ids = table.column_ids;
  out.counts = apply_normalization(table.counts, params);
  return out;
}

Matrix invert_normalization(const Matrix& values, const NormalizationParams& params) {
  if (static_cast<std::size_t>(values.cols()) != params.cols()) {
    throw ValidationError("normalization: " + std::to_string(values.cols()) + " columns vs " +
                          std::to_string(params.cols()) + " fitted");
  }
  Matrix out(values.rows(), values.cols());
  for (Eigen::Index c = 0; c < values.cols(); ++c) {
    const double lo = params.min[static_cast<std::size_t>(c)];
    const double span = params.max[static_cast<std::size_t>(c)] - lo;
    out.col(c) = values.col(c).array() * span + lo;
  }
  return out;
}

WindowSet::WindowSet(MovementTable normalized, std::size_t window)
    : table_(std::move(normalized)), window_(window) {
  if (window_ == 0) throw ValidationError("window length must be positive");
  if (table_.rows() <= window_) {
    throw ValidationError("window length " + std::to_string(window_) + " needs more than " +
                          std::to_string(window_) + " rows, got " + std::to_string(table_.rows()));
  }
}

WindowedSample WindowSet::operator[](std::size_t i) const {
  WindowedSample s;
  const auto start = static_cast<Eigen::Index>(i);
  const auto t = static_cast<Eigen::Index>(window_);
  s.X = table_.counts.middleRows(start, t);
  s.y = table_.counts.row(start + t);
  s.hour = hour_of(table_.timestamps[i + window_]);
  return s;
}

Batch WindowSet::batch(std::span<const std::size_t> indices) const {
  Batch b;
  const auto n = static_cast<Eigen::Index>(table_.cols());
  const auto rows = static_cast<Eigen::Index>(indices.size());
  b.steps.assign(window_, Matrix(rows, n));
  b.target.resize(rows, n);
  b.hours.resize(indices.size());
  for (Eigen::Index r = 0; r < rows; ++r) {
    const std::size_t i = indices[static_cast<std::size_t>(r)];
    for (std::size_t t = 0; t < window_; ++t) {
      b.steps[t].row(r) = table_.counts.row(static_cast<Eigen::Index>(i + t));
    }
    b.target.row(r) = table_.counts.row(static_cast<Eigen::Index>(i + window_));
    b.hours[static_cast<std::size_t>(r)] = hour_of(table_.timestamps[i + window_]);
  }
  return b;
}

Batch WindowSet::batch_range(std::size_t begin, std::size_t end) const {
  std::vector<std::size_t> idx(end - begin);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = begin + i;
  return batch(idx);
}

Matrix WindowSet::targets() const {
  return table_.counts.middleRows(static_cast<Eigen::Index>(window_), static_cast<Eigen::Index>(size()));
}

WindowSet make_windows(const MovementTable& normalized, std::size_t window) { return WindowSet(normalized, window); }

PreparedData prepare_data(const MovementTable& raw, std::size_t window, SplitFractions fractions) {
  Splits s = chronological_split(raw, fractions);
  PreparedData out;
  out.normalization = fit_normalization(s.train);
  out.train = make_windows(apply_normalization(s.train, out.normalization), window);
  out.val = make_windows(apply_normalization(s.val, out.normalization), window);
  out.test = make_windows(apply_normalization(s.test, out.normalization), window);
  return out;
}

}  // namespace hfdtm
