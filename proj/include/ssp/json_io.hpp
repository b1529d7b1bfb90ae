#ifndef SSP_JSON_IO_HPP
#define SSP_JSON_IO_HPP

#include <json.hpp>

#include "ssp/geo.hpp"

namespace ssp {

inline void to_json(nlohmann::json& j, const DepthGrid& g) {
  j = {{"z_min", g.z_min()}, {"z_max", g.z_max()}, {"step", g.step()}};
}

inline void from_json(const nlohmann::json& j, DepthGrid& g) {
  g = DepthGrid(j.at("z_min").get<double>(), j.at("z_max").get<double>(),
                j.at("step").get<double>());
}

inline void to_json(nlohmann::json& j, const GridGeometry& g) {
  j = {{"lat0", g.lat0}, {"lon0", g.lon0}, {"dlat", g.dlat},
       {"dlon", g.dlon}, {"n_lat", g.n_lat}, {"n_lon", g.n_lon}};
}

inline void from_json(const nlohmann::json& j, GridGeometry& g) {
  j.at("lat0").get_to(g.lat0);
  j.at("lon0").get_to(g.lon0);
  j.at("dlat").get_to(g.dlat);
  j.at("dlon").get_to(g.dlon);
  j.at("n_lat").get_to(g.n_lat);
  j.at("n_lon").get_to(g.n_lon);
}

inline void to_json(nlohmann::json& j, const TimeKey& t) { j = to_string(t); }

inline void from_json(const nlohmann::json& j, TimeKey& t) {
  t = parse_time(j.get<std::string>());
}

/// Reads the one-line JSON header that precedes every binary payload.
inline nlohmann::json read_header_line(std::istream& is,
                                       const std::string& expected_format) {
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("missing file header");
  nlohmann::json j = nlohmann::json::parse(line);
  if (j.value("format", "") != expected_format) {
    throw std::runtime_error("unexpected file format: " +
                             j.value("format", "<none>") + ", wanted " +
                             expected_format);
  }
  return j;
}

}  // namespace ssp

#endif  // SSP_JSON_IO_HPP
