#include "hfdtm/synthgen.hpp"

#include "hfdtm/errors.hpp"

#include <fmt/format.h>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace hfdtm {

namespace {

constexpr const char* kApproachNames[] = {"NB", "SB", "EB", "WB"};
constexpr const char* kTurnNames[] = {"L", "T", "R"};

bool is_through(const MovementSpec& m) {
  return m.turn == Turn::T && (m.approach == Approach::NB || m.approach == Approach::SB);
}

double bump(double t, double centre, double width) {
  const double z = (t - centre) / width;
  return std::exp(-0.5 * z * z);
}

// Relative demand at a fractional hour of day.
double diurnal_profile(const SynthConfig& c, double hour) {
  const double day = c.midday * bump(hour, 13.0, 3.5) + c.am_peak * bump(hour, c.am_peak_hour, c.peak_width_hours) +
                     c.pm_peak * bump(hour, c.pm_peak_hour, 1.2 * c.peak_width_hours);
  const double awake = 0.25 * (1.0 + std::tanh((hour - 5.5) / 1.0)) * (1.0 + std::tanh((22.5 - hour) / 1.2));
  return c.off_peak_floor + day * awake;
}

double population_variance(std::span<const double> x, double mean) {
  double s = 0.0;
  for (double v : x) s += (v - mean) * (v - mean);
  return s / static_cast<double>(x.size());
}

double mean_of(std::span<const double> x) {
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

}  // namespace

std::vector<MovementSpec> SynthConfig::default_layout() {
  return {
      {Approach::NB, Turn::L, 0.10}, {Approach::NB, Turn::T, 0.0},  {Approach::NB, Turn::R, 0.08},
      {Approach::SB, Turn::L, 0.09}, {Approach::SB, Turn::T, 0.0},  {Approach::SB, Turn::R, 0.10},
      {Approach::EB, Turn::L, 0.06}, {Approach::EB, Turn::T, 0.10}, {Approach::EB, Turn::R, 0.06},
      {Approach::WB, Turn::L, 0.06}, {Approach::WB, Turn::T, 0.09}, {Approach::WB, Turn::R, 0.05},
  };
}

void SynthConfig::validate() const {
  if (n_intersections == 0) throw ValidationError("synth: n_intersections must be at least 1");
  if (days == 0) throw ValidationError("synth: days must be at least 1");
  if (corridor_noise < 0 || turn_noise < 0 || day_noise < 0 || local_demand < 0) {
    throw ValidationError("synth: noise levels must be non-negative");
  }
  if (std::abs(corridor_persistence) >= 1.0) throw ValidationError("synth: corridor_persistence must be in (-1, 1)");
  if (std::abs(turn_persistence) >= 1.0) throw ValidationError("synth: turn_persistence must be in (-1, 1)");
  if (base_volume <= 0 || off_peak_floor < 0 || turn_ratio_scale < 0) {
    throw ValidationError("synth: volumes and ratios must be non-negative");
  }
  const auto has = [&](Approach a) {
    return std::any_of(layout.begin(), layout.end(),
                       [a](const MovementSpec& m) { return m.approach == a && m.turn == Turn::T; });
  };
  if (!has(Approach::NB) || !has(Approach::SB)) {
    throw ValidationError("synth: layout needs a corridor through movement in each direction (NB:T and SB:T)");
  }
  for (const auto& [k, a] : missing_approaches) {
    if (k >= n_intersections) throw ValidationError("synth: missing approach refers to intersection out of range");
    if (a == Approach::NB || a == Approach::SB) throw ValidationError("synth: corridor approaches cannot be missing");
  }
  parse_timestamp(start);
}

namespace {

template <typename E, std::size_t N>
E enum_from_name(const char* const (&names)[N], const std::string& name, const char* what) {
  for (std::size_t i = 0; i < N; ++i) {
    if (name == names[i]) return static_cast<E>(i);
  }
  throw ValidationError(fmt::format("synth: unknown {} '{}'", what, name));
}

}  // namespace

std::string SynthConfig::to_json() const {
  using json = nlohmann::json;
  json layout_j = json::array();
  for (const auto& m : layout) {
    layout_j.push_back({{"approach", kApproachNames[static_cast<int>(m.approach)]},
                        {"turn", kTurnNames[static_cast<int>(m.turn)]},
                        {"ratio", m.ratio}});
  }
  json missing = json::array();
  for (const auto& [k, a] : missing_approaches) missing.push_back({{"intersection", k}, {"approach", kApproachNames[static_cast<int>(a)]}});
  const json j = {{"n_intersections", n_intersections},
                  {"days", days},
                  {"seed", seed},
                  {"start", start},
                  {"base_volume", base_volume},
                  {"am_peak", am_peak},
                  {"am_peak_hour", am_peak_hour},
                  {"pm_peak", pm_peak},
                  {"pm_peak_hour", pm_peak_hour},
                  {"peak_width_hours", peak_width_hours},
                  {"midday", midday},
                  {"off_peak_floor", off_peak_floor},
                  {"sb_factor", sb_factor},
                  {"corridor_noise", corridor_noise},
                  {"corridor_persistence", corridor_persistence},
                  {"day_noise", day_noise},
                  {"turn_noise", turn_noise},
                  {"turn_persistence", turn_persistence},
                  {"turn_ratio_scale", turn_ratio_scale},
                  {"local_demand", local_demand},
                  {"layout", layout_j},
                  {"missing_approaches", missing}};
  return j.dump(2);
}

SynthConfig SynthConfig::from_json(const std::string& text) {
  using json = nlohmann::json;
  SynthConfig c;
  try {
    const json j = json::parse(text);
    if (!j.is_object()) throw ValidationError("synth config: expected a JSON object");
    const json known = json::parse(c.to_json());
    for (const auto& [key, value] : j.items()) {
      if (!known.contains(key)) throw ValidationError("synth config: unknown key '" + key + "'");
    }
    c.n_intersections = j.value("n_intersections", c.n_intersections);
    c.days = j.value("days", c.days);
    c.seed = j.value("seed", c.seed);
    c.start = j.value("start", c.start);
    c.base_volume = j.value("base_volume", c.base_volume);
    c.am_peak = j.value("am_peak", c.am_peak);
    c.am_peak_hour = j.value("am_peak_hour", c.am_peak_hour);
    c.pm_peak = j.value("pm_peak", c.pm_peak);
    c.pm_peak_hour = j.value("pm_peak_hour", c.pm_peak_hour);
    c.peak_width_hours = j.value("peak_width_hours", c.peak_width_hours);
    c.midday = j.value("midday", c.midday);
    c.off_peak_floor = j.value("off_peak_floor", c.off_peak_floor);
    c.sb_factor = j.value("sb_factor", c.sb_factor);
    c.corridor_noise = j.value("corridor_noise", c.corridor_noise);
    c.corridor_persistence = j.value("corridor_persistence", c.corridor_persistence);
    c.day_noise = j.value("day_noise", c.day_noise);
    c.turn_noise = j.value("turn_noise", c.turn_noise);
    c.turn_persistence = j.value("turn_persistence", c.turn_persistence);
    c.turn_ratio_scale = j.value("turn_ratio_scale", c.turn_ratio_scale);
    c.local_demand = j.value("local_demand", c.local_demand);
    if (j.contains("layout")) {
      c.layout.clear();
      for (const auto& m : j.at("layout")) {
        c.layout.push_back({enum_from_name<Approach>(kApproachNames, m.at("approach").get<std::string>(), "approach"),
                            enum_from_name<Turn>(kTurnNames, m.at("turn").get<std::string>(), "turn"),
                            m.value("ratio", 0.0)});
      }
    }
    if (j.contains("missing_approaches")) {
      c.missing_approaches.clear();
      for (const auto& m : j.at("missing_approaches")) {
        c.missing_approaches.emplace_back(
            m.at("intersection").get<std::size_t>(),
            enum_from_name<Approach>(kApproachNames, m.at("approach").get<std::string>(), "approach"));
      }
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("synth config: ") + e.what());
  }
  c.validate();
  return c;
}

std::string movement_id(std::size_t intersection, Approach approach, Turn turn) {
  return fmt::format("I{}:{}:{}", intersection + 1, kApproachNames[static_cast<int>(approach)],
                     kTurnNames[static_cast<int>(turn)]);
}

SynthDataset generate_corridor_data(const SynthConfig& config) {
  config.validate();
  const std::size_t m = config.days * kIntervalsPerDay;
  const std::size_t k_count = config.n_intersections;
  const std::size_t per = config.layout.size();
  const std::size_t n = k_count * per;

  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  SynthDataset out;
  MovementTable& table = out.table;
  CorridorTopology& topo = out.topology;
  const TimePoint start = parse_timestamp(config.start);
  table.timestamps.resize(m);
  for (std::size_t r = 0; r < m; ++r) table.timestamps[r] = start + static_cast<long>(r) * kInterval;
  table.counts = Matrix::Zero(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
  topo.n_movements = n;

  std::vector<double> profile(m);
  for (std::size_t r = 0; r < m; ++r) {
    profile[r] = diurnal_profile(config, static_cast<double>(r % kIntervalsPerDay) / 4.0);
  }
  std::vector<double> day_factor(config.days);
  for (double& f : day_factor) f = std::exp(config.day_noise * normal(rng));

  const double sc = config.corridor_noise;
  const double rho = config.corridor_persistence;
  const double innovation = std::sqrt(1.0 - rho * rho);
  const double st = config.turn_noise;
  const double rho_t = config.turn_persistence;
  const double innovation_t = std::sqrt(1.0 - rho_t * rho_t);
  std::poisson_distribution<int> local(config.local_demand);

  for (std::size_t k = 0; k < k_count; ++k) {
    topo.groups.emplace_back();
    topo.group_names.push_back(fmt::format("I{}", k + 1));
    const double site = 1.0 + 0.15 * std::sin(static_cast<double>(k));

    // Expected entering corridor flow per direction (before rounding).
    std::vector<double> entering[2];
    for (int dir = 0; dir < 2; ++dir) {
      const double dir_factor = dir == 0 ? 1.0 : config.sb_factor;
      entering[dir].resize(m);
      double z = 0.0;
      for (std::size_t r = 0; r < m; ++r) {
        z = rho * z + innovation * normal(rng);
        entering[dir][r] = config.base_volume * site * dir_factor * profile[r] * day_factor[r / kIntervalsPerDay] *
                           std::exp(sc * z - 0.5 * sc * sc);
      }
    }

    for (std::size_t j = 0; j < per; ++j) {
      const MovementSpec& spec = config.layout[j];
      const std::size_t col = k * per + j;
      const auto c = static_cast<Eigen::Index>(col);
      topo.movement_ids.push_back(movement_id(k, spec.approach, spec.turn));
      topo.groups.back().push_back(col);

      const bool missing = std::any_of(config.missing_approaches.begin(), config.missing_approaches.end(),
                                       [&](const auto& p) { return p.first == k && p.second == spec.approach; });
      topo.zero_mask.push_back(missing ? 0.0 : 1.0);
      if (missing) continue;
      topo.active_idx.push_back(col);

      if (is_through(spec)) {
        topo.corridor_idx.push_back(col);
        const auto& src = entering[spec.approach == Approach::NB ? 0 : 1];
        for (std::size_t r = 0; r < m; ++r) table.counts(static_cast<Eigen::Index>(r), c) = std::round(src[r]);
        continue;
      }
      const double ratio = config.turn_ratio_scale * spec.ratio;
      double zt = 0.0;
      for (std::size_t r = 0; r < m; ++r) {
        double src = 0.0;
        switch (spec.approach) {
          case Approach::NB: src = entering[0][r]; break;
          case Approach::SB: src = entering[1][r]; break;
          default: src = 0.5 * (entering[0][r] + entering[1][r]); break;
        }
        zt = rho_t * zt + innovation_t * normal(rng);
        const double noise = std::exp(st * zt - 0.5 * st * st);
        const double v = ratio * src * noise + static_cast<double>(local(rng));
        table.counts(static_cast<Eigen::Index>(r), c) = std::max(0.0, std::round(v));
      }
    }
  }
  table.column_ids = topo.movement_ids;
  topo.validate();
  return out;
}

std::vector<std::size_t> equal_count_bins(std::span<const double> values, std::size_t n_bins) {
  if (n_bins < 2) throw ValidationError("binning: need at least 2 bins");
  const std::size_t m = values.size();
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<std::size_t> bin(m);
  for (std::size_t rank = 0; rank < m; ++rank) bin[order[rank]] = rank * n_bins / m;
  return bin;
}

FlowStats compute_flow_statistics(const MovementTable& table, const CorridorTopology& topology, std::size_t n_bins) {
  if (table.rows() == 0) throw ValidationError("flow statistics: empty table");
  if (n_bins < 2) throw ValidationError("flow statistics: n_bins must be at least 2");
  if (table.cols() != topology.n_movements) throw ValidationError("flow statistics: table/topology width mismatch");

  const std::size_t m = table.rows();
  const std::size_t n = table.cols();
  FlowStats stats;
  stats.n_bins = n_bins;

  std::vector<double> corridor_total(m, 0.0);
  for (std::size_t i : topology.corridor_idx) {
    for (std::size_t r = 0; r < m; ++r) {
      corridor_total[r] += table.counts(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(i));
    }
  }
  const double all_volume = table.counts.sum();
  const double corr_volume = std::accumulate(corridor_total.begin(), corridor_total.end(), 0.0);
  stats.corridor_volume_share = all_volume > 0 ? corr_volume / all_volume : 0.0;

  const double yc_mean = mean_of(corridor_total);
  const double yc_var = population_variance(corridor_total, yc_mean);
  const auto bins = equal_count_bins(corridor_total, n_bins);

  std::vector<double> cv_c, cv_t, corrs, r2s;
  std::vector<double> col(m);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t r = 0; r < m; ++r) col[r] = table.counts(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(i));
    const double mu = mean_of(col);
    const double var = population_variance(col, mu);

    // Binned decomposition, accumulated per bin.
    std::vector<double> bin_sum(n_bins, 0.0), bin_count(n_bins, 0.0);
    for (std::size_t r = 0; r < m; ++r) {
      bin_sum[bins[r]] += col[r];
      bin_count[bins[r]] += 1.0;
    }
    std::vector<double> bin_sq(n_bins, 0.0);
    for (std::size_t r = 0; r < m; ++r) {
      const double d = col[r] - bin_sum[bins[r]] / bin_count[bins[r]];
      bin_sq[bins[r]] += d * d;
    }
    MovementDecomposition dec;
    dec.index = i;
    dec.total_var = var;
    for (std::size_t b = 0; b < n_bins; ++b) {
      if (bin_count[b] == 0) continue;
      const double w = bin_count[b] / static_cast<double>(m);
      const double bm = bin_sum[b] / bin_count[b];
      dec.expected_cond_var += w * (bin_sq[b] / bin_count[b]);
      dec.var_cond_mean += w * (bm - mu) * (bm - mu);
    }
    stats.decomposition.push_back(dec);

    if (!topology.is_active(i)) continue;
    const bool corridor = topology.is_corridor(i);
    if (mu > 0) (corridor ? cv_c : cv_t).push_back(std::sqrt(var) / mu);
    if (corridor) continue;
    if (var == 0.0 || yc_var == 0.0) {
      stats.warnings.push_back(fmt::format("movement {} has zero variance; skipped for correlation/R2",
                                           i < topology.movement_ids.size() ? topology.movement_ids[i]
                                                                            : std::to_string(i)));
      continue;
    }
    double cov = 0.0;
    for (std::size_t r = 0; r < m; ++r) cov += (col[r] - mu) * (corridor_total[r] - yc_mean);
    cov /= static_cast<double>(m);
    const double rho = std::clamp(cov / std::sqrt(var * yc_var), -1.0, 1.0);
    corrs.push_back(rho);
    // Simple regression on one predictor: R^2 is the squared correlation.
    r2s.push_back(rho * rho);
  }
  const auto avg = [](const std::vector<double>& v) { return v.empty() ? 0.0 : mean_of(v); };
  stats.cv_corridor = avg(cv_c);
  stats.cv_turning = avg(cv_t);
  stats.mean_corr = avg(corrs);
  stats.mean_r2 = avg(r2s);
  return stats;
}

std::string flow_stats_to_json(const FlowStats& stats, const CorridorTopology& topology) {
  nlohmann::json per = nlohmann::json::array();
  for (const auto& d : stats.decomposition) {
    per.push_back({{"movement", d.index < topology.movement_ids.size() ? topology.movement_ids[d.index]
                                                                       : std::to_string(d.index)},
                   {"corridor", topology.is_corridor(d.index)},
                   {"active", topology.is_active(d.index)},
                   {"total_var", d.total_var},
                   {"expected_cond_var", d.expected_cond_var},
                   {"var_cond_mean", d.var_cond_mean}});
  }
  nlohmann::json j = {{"corridor_volume_share", stats.corridor_volume_share},
                      {"cv_corridor", stats.cv_corridor},
                      {"cv_turning", stats.cv_turning},
                      {"mean_corr", stats.mean_corr},
                      {"mean_r2", stats.mean_r2},
                      {"n_bins", stats.n_bins},
                      {"decomposition", per},
                      {"warnings", stats.warnings}};
  return j.dump(2);
}

std::string flow_stats_to_text(const FlowStats& stats) {
  double total = 0, within = 0, between = 0;
  for (const auto& d : stats.decomposition) {
    total += d.total_var;
    within += d.expected_cond_var;
    between += d.var_cond_mean;
  }
  std::string out;
  out += fmt::format("{:<34}{:>10.4f}\n", "Corridor volume share", stats.corridor_volume_share);
  out += fmt::format("{:<34}{:>10.4f}\n", "Mean CV (corridor)", stats.cv_corridor);
  out += fmt::format("{:<34}{:>10.4f}\n", "Mean CV (turning)", stats.cv_turning);
  out += fmt::format("{:<34}{:>10.4f}\n", "Mean corr(turn, corridor total)", stats.mean_corr);
  out += fmt::format("{:<34}{:>10.4f}\n", "Mean R^2(turn ~ corridor total)", stats.mean_r2);
  out += fmt::format("Variance decomposition ({} equal-count bins, summed over movements)\n", stats.n_bins);
  out += fmt::format("  {:<32}{:>14.4f}\n", "Var(Y)", total);
  out += fmt::format("  {:<32}{:>14.4f}\n", "E[Var(Y | bin)]", within);
  out += fmt::format("  {:<32}{:>14.4f}\n", "Var(E[Y | bin])", between);
  for (const auto& w : stats.warnings) out += "warning: " + w + "\n";
  return out;
}

}  // namespace hfdtm
