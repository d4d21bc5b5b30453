#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace fedparking::data {

// Occupancy history of one parking lot on a (nominally) 30-minute grid.
struct RawSeries {
  std::string lot_id;
  std::vector<std::int64_t> timestamps;  // seconds since the Unix epoch, UTC
  std::vector<double> occupancy;         // occupied / capacity, in [0, 1]
  int capacity = 0;

  std::size_t size() const { return occupancy.size(); }
};

// One supervised pair: z past occupancy values and the next value.
struct Window {
  std::vector<double> input;
  double target = 0.0;
};

struct TimeSeriesDataset {
  std::vector<Window> windows;
  std::size_t window_size = 0;
  std::size_t split_index = 0;  // windows[0, split_index) train, the rest test

  std::span<const Window> train() const {
    return std::span<const Window>(windows).first(split_index);
  }
  std::span<const Window> test() const {
    return std::span<const Window>(windows).subspan(split_index);
  }
};

// Which CSV columns hold which field. Names are matched against the header
// row; when the file has no header, the indices are used instead.
struct CsvColumns {
  std::string lot_id = "SystemCodeNumber";
  std::string capacity = "Capacity";
  std::string occupied = "Occupancy";
  std::string timestamp = "LastUpdated";
  int lot_id_index = 0;
  int capacity_index = 1;
  int occupied_index = 2;
  int timestamp_index = 3;
  // Timestamps are rounded to the nearest multiple of this many minutes
  // before duplicate removal. Zero disables snapping.
  int snap_minutes = 30;
};

// Reads the Birmingham parking export (or any CSV with the same four fields).
// Returns one series per requested lot, in the requested order.
std::vector<RawSeries> load_birmingham_csv(const std::filesystem::path& path,
                                           std::span<const std::string> lot_ids,
                                           const CsvColumns& columns = {});

// Parses "YYYY-MM-DD HH:MM[:SS]" (also accepts a 'T' separator) as UTC.
std::int64_t parse_timestamp(const std::string& text);

struct SynthesisParams {
  double base = 0.5;             // mean occupancy
  double daily_amplitude = 0.3;  // peak deviation of the daily cycle
  double phase = 0.0;            // radians
  double trend = 0.05;           // total drift over the whole series
  double noise = 0.03;           // standard deviation of Gaussian noise
  int capacity = 100;
  std::string lot_id = "synthetic";
};

// Sinusoidal daily cycle + linear trend + seeded Gaussian noise, clipped to
// [0, 1]. Slots are 30 minutes apart starting at 08:00 each day.
RawSeries synthesize_series(std::uint64_t seed, int days, int slots_per_day,
                            const SynthesisParams& params = {});

// Sliding windows of length z with next-step targets; the first
// floor(train_fraction * count) windows form the training split.
TimeSeriesDataset make_windows(const RawSeries& series, std::size_t z,
                               double train_fraction);

}  // namespace fedparking::data
