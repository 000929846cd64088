/* Copyright 2026 The Podracer Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "podracer/anakin.hpp"
#include "podracer/common.hpp"
#include "podracer/sebulba.hpp"

namespace podracer {

// CSV schemas are part of the external interface and stay stable:
//   anakin:  update,env_steps,mean_return,loss,steps_per_sec
//   sebulba: update,frames,mean_return,frames_per_sec,queue_occupancy,mean_param_lag
// steps_per_sec / frames_per_sec are wall-clock derived; every other column
// is deterministic for a fixed config and seed.

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

inline void write_anakin_csv(const std::string& path,
                             const std::vector<AnakinLogRow>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("cannot open metrics file for writing: " + path);
  out << "update,env_steps,mean_return,loss,steps_per_sec\n";
  for (const auto& r : rows)
    out << r.update << ',' << r.env_steps << ',' << format_double(r.mean_return)
        << ',' << format_double(r.loss) << ',' << format_double(r.steps_per_sec)
        << '\n';
}

inline void write_sebulba_csv(const std::string& path,
                              const std::vector<SebulbaLogRow>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("cannot open metrics file for writing: " + path);
  out << "update,frames,mean_return,frames_per_sec,queue_occupancy,mean_param_lag\n";
  for (const auto& r : rows)
    out << r.update << ',' << r.frames << ',' << format_double(r.mean_return)
        << ',' << format_double(r.frames_per_sec) << ','
        << format_double(r.queue_occupancy) << ','
        << format_double(r.mean_param_lag) << '\n';
}

struct CsvTable {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  std::size_t column_index(const std::string& name) const {
    for (std::size_t i = 0; i < columns.size(); ++i)
      if (columns[i] == name) return i;
    throw ConfigError("csv has no column named '" + name + "'");
  }

  std::vector<double> column_as_double(const std::string& name) const {
    const std::size_t idx = column_index(name);
    std::vector<double> out;
    out.reserve(rows.size());
    for (const auto& r : rows) out.push_back(std::stod(r.at(idx)));
    return out;
  }
};

inline CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open csv: " + path);
  CsvTable table;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (first) {
      table.columns = std::move(cells);
      first = false;
    } else {
      table.rows.push_back(std::move(cells));
    }
  }
  return table;
}

}  // namespace podracer
