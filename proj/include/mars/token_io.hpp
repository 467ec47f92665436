#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mars/vqvae.hpp"

namespace mars {

inline nlohmann::json schedule_to_json(const LodSchedule& schedule) {
  return {{"lods", schedule.lods},
          {"points_per_lod", schedule.points_per_lod},
          {"latents_per_lod", schedule.latents_per_lod},
          {"feature_dim", schedule.feature_dim}};
}

inline LodSchedule schedule_from_json(const nlohmann::json& j) {
  LodSchedule s;
  s.lods = j.at("lods").get<Index>();
  s.points_per_lod = j.at("points_per_lod").get<std::vector<Index>>();
  s.latents_per_lod = j.at("latents_per_lod").get<std::vector<Index>>();
  s.feature_dim = j.at("feature_dim").get<Index>();
  s.validate();
  return s;
}

inline nlohmann::json token_maps_to_json(const std::vector<LodTokenMap>& maps,
                                         const LodSchedule& schedule) {
  nlohmann::json lods = nlohmann::json::array();
  for (const auto& map : maps) {
    lods.push_back({{"lod", map.lod}, {"indices", map.indices}});
  }
  return {{"schedule", schedule_to_json(schedule)}, {"lods", lods}};
}

inline std::vector<LodTokenMap> token_maps_from_json(const nlohmann::json& j,
                                                     const LodSchedule& expected,
                                                     Index codebook_size) {
  const LodSchedule stored = schedule_from_json(j.at("schedule"));
  if (!(stored == expected)) {
    throw ConfigError("token maps were produced under a different schedule");
  }
  std::vector<LodTokenMap> maps;
  for (const auto& entry : j.at("lods")) {
    LodTokenMap map;
    map.lod = entry.at("lod").get<Index>();
    map.indices = entry.at("indices").get<std::vector<Index>>();
    if (map.lod < 1 || map.lod > expected.lods) throw FormatError("token map: LOD out of range");
    if (static_cast<Index>(map.indices.size()) !=
        expected.latents_per_lod[static_cast<std::size_t>(map.lod - 1)]) {
      throw FormatError("token map: length does not match the schedule at LOD " +
                        std::to_string(map.lod));
    }
    for (Index id : map.indices) {
      if (id < 0 || id >= codebook_size) throw FormatError("token map: index out of codebook range");
    }
    maps.push_back(std::move(map));
  }
  return maps;
}

inline void save_token_maps(const std::vector<LodTokenMap>& maps, const LodSchedule& schedule,
                            const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("save_token_maps: cannot open '" + path + "'");
  out << token_maps_to_json(maps, schedule).dump(2) << '\n';
  if (!out) throw IoError("save_token_maps: write failed for '" + path + "'");
}

inline std::vector<LodTokenMap> load_token_maps(const std::string& path, const LodSchedule& expected,
                                                Index codebook_size) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("load_token_maps: cannot open '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("load_token_maps: malformed JSON in '" + path + "': " + e.what());
  }
  return token_maps_from_json(j, expected, codebook_size);
}

}  // namespace mars
