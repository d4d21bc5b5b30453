#pragma once

#include <random>
#include <vector>

#include "fedparking/game.hpp"

namespace fixture {

// Vehicles drawn from the default ranges (durations in minutes).
inline std::vector<fedparking::game::VehicleProfile> random_vehicles(std::mt19937_64& rng,
                                                                     std::size_t count,
                                                                     std::size_t lots) {
  std::uniform_real_distribution<double> up(0.01, 0.99), ud(20.0, 100.0), uk(1.0, 10.0);
  std::vector<fedparking::game::VehicleProfile> out(count);
  for (auto& v : out) {
    for (std::size_t j = 0; j < lots; ++j) v.preference.push_back(up(rng));
    v.duration = ud(rng);
    v.energy = uk(rng);
  }
  return out;
}

inline fedparking::game::Game random_game(std::mt19937_64& rng, const std::vector<double>& g,
                                          std::size_t vehicles = 35) {
  std::uniform_real_distribution<double> rate(1.0, 3.0), size(2.0, 5.0);
  std::vector<fedparking::game::PloProfile> plos(g.size());
  for (std::size_t j = 0; j < g.size(); ++j) {
    plos[j].revenue_rate = g[j];
    plos[j].r_max = std::min(3.0, g[j]);
    plos[j].workload = rate(rng) * size(rng) * 10.0;
  }
  return {plos, random_vehicles(rng, vehicles, g.size())};
}

}  // namespace fixture
