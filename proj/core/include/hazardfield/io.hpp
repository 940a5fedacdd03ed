#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "hazardfield/diagnostics.hpp"
#include "hazardfield/geometry.hpp"
#include "hazardfield/model.hpp"
#include "hazardfield/sampler.hpp"

namespace hazardfield {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const;
};

CsvTable read_csv(const std::filesystem::path& path);
void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows);

/// Round-trip-exact decimal formatting for reproducible CSV output.
std::string format_double(double x);

/// Geometry files: segments.csv (segment_id, vertex_index, x_km, y_km),
/// intersections.csv (segment_a, arc_a_km, segment_b, arc_b_km) and optional
/// endpoints.csv (segment_id, arc_km, kind with kind in {source, sink}).
CanalNetwork load_network(const std::filesystem::path& dir);
void save_network(const std::filesystem::path& dir, const CanalNetwork& network);

/// Dataset files: households.csv (household_id, x_km, y_km, group, x1..xp)
/// and observations.csv (household_id, y).
SurveyDataset load_dataset(const std::filesystem::path& households_csv,
                           const std::filesystem::path& observations_csv);
void save_dataset(const std::filesystem::path& dir, const SurveyDataset& dataset);

/// Draws file: one row per iteration with chain, iter, divergent, treedepth,
/// accept_stat, stepsize, then the constrained-scale parameter columns.
void save_draws(const std::filesystem::path& path, const ChainOutput& chain, int chain_id);
std::vector<ChainOutput> load_draws(const std::vector<std::filesystem::path>& paths);

/// Resolves a draws argument: a single CSV or a directory of draws_chain*.csv.
std::vector<std::filesystem::path> resolve_draws_paths(const std::filesystem::path& arg);

void save_fit_report(const std::filesystem::path& path, const FitReport& report);

}  // namespace hazardfield
