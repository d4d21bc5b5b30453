#include "fedparking/data.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <charconv>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <sstream>

#include "fedparking/error.hpp"

namespace fedparking::data {
namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        field.push_back('"');
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        field.push_back(ch);
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else if (ch != '\r') {
      field.push_back(ch);
    }
  }
  fields.push_back(std::move(field));
  return fields;
}

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t");
  return s.substr(first, last - first + 1);
}

bool parse_double(const std::string& text, double& out) {
  const std::string t = trim(text);
  if (t.empty()) return false;
  const auto* begin = t.data();
  const auto* end = t.data() + t.size();
  auto [ptr, ec] = std::from_chars(begin, end, out);
  return ec == std::errc() && ptr == end && std::isfinite(out);
}

struct Row {
  std::int64_t timestamp;
  double occupancy;
  int capacity;
};

}  // namespace

std::int64_t parse_timestamp(const std::string& text) {
  int y = 0, mo = 0, d = 0, h = 0, mi = 0;
  double s = 0.0;
  char sep = ' ';
  const std::string t = trim(text);
  const int n = std::sscanf(t.c_str(), "%d-%d-%d%c%d:%d:%lf", &y, &mo, &d, &sep,
                            &h, &mi, &s);
  if (n < 6 || (sep != ' ' && sep != 'T')) {
    throw ParseError("unrecognized timestamp '" + t + "'");
  }
  using namespace std::chrono;
  const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)},
                           day{static_cast<unsigned>(d)}};
  if (!ymd.ok() || h < 0 || h > 23 || mi < 0 || mi > 59 || s < 0 || s >= 61) {
    throw ParseError("invalid calendar value in timestamp '" + t + "'");
  }
  const auto days = sys_days{ymd}.time_since_epoch().count();
  return static_cast<std::int64_t>(days) * 86400 + h * 3600 + mi * 60 +
         static_cast<std::int64_t>(s);
}

std::vector<RawSeries> load_birmingham_csv(const std::filesystem::path& path,
                                           std::span<const std::string> lot_ids,
                                           const CsvColumns& columns) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open parking CSV '" + path.string() + "'");

  int lot_col = columns.lot_id_index;
  int cap_col = columns.capacity_index;
  int occ_col = columns.occupied_index;
  int ts_col = columns.timestamp_index;

  std::map<std::string, std::vector<Row>> rows_by_lot;
  for (const auto& id : lot_ids) rows_by_lot[id];

  std::string line;
  std::size_t row_number = 0;
  bool first = true;
  while (std::getline(in, line)) {
    ++row_number;
    if (trim(line).empty()) continue;
    auto fields = split_csv_line(line);

    if (first) {
      first = false;
      // A header row is recognised by a non-numeric capacity field.
      double probe = 0.0;
      const bool has_cap = cap_col >= 0 &&
                           static_cast<std::size_t>(cap_col) < fields.size();
      if (!has_cap || !parse_double(fields[cap_col], probe)) {
        auto find = [&](const std::string& name, int fallback) {
          for (std::size_t i = 0; i < fields.size(); ++i) {
            if (trim(fields[i]) == name) return static_cast<int>(i);
          }
          return fallback;
        };
        lot_col = find(columns.lot_id, lot_col);
        cap_col = find(columns.capacity, cap_col);
        occ_col = find(columns.occupied, occ_col);
        ts_col = find(columns.timestamp, ts_col);
        continue;
      }
    }

    const int max_col = std::max({lot_col, cap_col, occ_col, ts_col});
    if (static_cast<int>(fields.size()) <= max_col) {
      throw ParseError("row " + std::to_string(row_number) + ": expected at least " +
                       std::to_string(max_col + 1) + " fields, found " +
                       std::to_string(fields.size()));
    }
    const std::string lot = trim(fields[lot_col]);
    auto it = rows_by_lot.find(lot);
    if (it == rows_by_lot.end()) continue;

    double cap = 0.0, occ = 0.0;
    if (!parse_double(fields[cap_col], cap)) {
      throw ParseError("row " + std::to_string(row_number) +
                       ": non-numeric capacity '" + fields[cap_col] + "'");
    }
    if (!parse_double(fields[occ_col], occ)) {
      throw ParseError("row " + std::to_string(row_number) +
                       ": non-numeric occupied count '" + fields[occ_col] + "'");
    }
    if (cap <= 0.0) {
      throw ParseError("row " + std::to_string(row_number) +
                       ": capacity must be positive");
    }
    std::int64_t ts = 0;
    try {
      ts = parse_timestamp(fields[ts_col]);
    } catch (const ParseError& e) {
      throw ParseError("row " + std::to_string(row_number) + ": " + e.what());
    }
    if (columns.snap_minutes > 0) {
      const std::int64_t q = std::int64_t{columns.snap_minutes} * 60;
      ts = ((ts + q / 2) / q) * q;
    }
    it->second.push_back({ts, std::clamp(occ / cap, 0.0, 1.0),
                          static_cast<int>(std::lround(cap))});
  }

  std::vector<RawSeries> out;
  out.reserve(lot_ids.size());
  for (const auto& id : lot_ids) {
    auto& rows = rows_by_lot[id];
    if (rows.empty()) {
      throw ParseError("lot '" + id + "' not found in '" + path.string() + "'");
    }
    std::stable_sort(rows.begin(), rows.end(),
                     [](const Row& a, const Row& b) { return a.timestamp < b.timestamp; });
    RawSeries series;
    series.lot_id = id;
    series.capacity = rows.front().capacity;
    for (const auto& row : rows) {
      if (!series.timestamps.empty() && series.timestamps.back() == row.timestamp) {
        continue;
      }
      series.timestamps.push_back(row.timestamp);
      series.occupancy.push_back(row.occupancy);
    }
    out.push_back(std::move(series));
  }
  return out;
}

RawSeries synthesize_series(std::uint64_t seed, int days, int slots_per_day,
                            const SynthesisParams& params) {
  if (days < 1) throw DomainError("synthesize_series: days must be >= 1");
  if (slots_per_day < 2) {
    throw DomainError("synthesize_series: slots_per_day must be >= 2");
  }
  // 2016-10-04 08:00 UTC, the first day of the Birmingham export.
  constexpr std::int64_t kStart = 1475568000;
  constexpr std::int64_t kSlot = 30 * 60;
  // More than 48 slots cannot fit in a day; keep the grid contiguous then.
  const std::int64_t day_stride = std::max<std::int64_t>(86400, slots_per_day * kSlot);

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  const std::size_t n = static_cast<std::size_t>(days) * slots_per_day;
  RawSeries series;
  series.lot_id = params.lot_id;
  series.capacity = params.capacity;
  series.timestamps.reserve(n);
  series.occupancy.reserve(n);
  for (int day = 0; day < days; ++day) {
    for (int slot = 0; slot < slots_per_day; ++slot) {
      const std::size_t k = series.occupancy.size();
      const double cycle =
          std::sin(2.0 * std::numbers::pi * slot / slots_per_day + params.phase);
      const double drift = params.trend * static_cast<double>(k) / static_cast<double>(n);
      double value = params.base + params.daily_amplitude * cycle + drift;
      if (params.noise > 0.0) value += params.noise * gauss(rng);
      series.timestamps.push_back(kStart + day * day_stride + slot * kSlot);
      series.occupancy.push_back(std::clamp(value, 0.0, 1.0));
    }
  }
  return series;
}

TimeSeriesDataset make_windows(const RawSeries& series, std::size_t z,
                               double train_fraction) {
  if (z == 0) throw DomainError("make_windows: window size must be positive");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw DomainError("make_windows: train_fraction must lie in (0, 1)");
  }
  const std::size_t y = series.size();
  if (y < z + 1) {
    throw DomainError("make_windows: series '" + series.lot_id + "' has " +
                      std::to_string(y) + " points, need at least " +
                      std::to_string(z + 1) + " for window size " + std::to_string(z));
  }
  TimeSeriesDataset ds;
  ds.window_size = z;
  const std::size_t count = y - z;
  ds.windows.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    Window w;
    w.input.assign(series.occupancy.begin() + k, series.occupancy.begin() + k + z);
    w.target = series.occupancy[k + z];
    ds.windows.push_back(std::move(w));
  }
  ds.split_index = static_cast<std::size_t>(
      std::floor(train_fraction * static_cast<double>(count)));
  ds.split_index = std::clamp<std::size_t>(ds.split_index, 1, count);
  return ds;
}

}  // namespace fedparking::data
