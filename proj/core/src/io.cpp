#include "hazardfield/io.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "hazardfield/errors.hpp"

namespace hazardfield {

namespace fs = std::filesystem;

std::size_t CsvTable::column(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return i;
  }
  throw IoError("missing CSV column '" + name + "'");
}

namespace {
std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) {
    // trim surrounding whitespace
    const auto b = field.find_first_not_of(" \t\r");
    const auto e = field.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? "" : field.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

double to_double(const std::string& s, const std::string& what) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw IoError("cannot parse '" + s + "' as a number (" + what + ")");
  }
}

int to_int(const std::string& s, const std::string& what) {
  try {
    std::size_t pos = 0;
    const int v = std::stoi(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw IoError("cannot parse '" + s + "' as an integer (" + what + ")");
  }
}
}  // namespace

CsvTable read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  CsvTable table;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (first) {
      table.header = split_line(line);
      first = false;
    } else {
      auto row = split_line(line);
      if (row.size() != table.header.size()) {
        throw IoError("ragged CSV row in '" + path.string() + "'");
      }
      table.rows.push_back(std::move(row));
    }
  }
  if (first) throw IoError("empty CSV file '" + path.string() + "'");
  return table;
}

void write_csv(const fs::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  for (std::size_t i = 0; i < header.size(); ++i) {
    out << header[i] << (i + 1 < header.size() ? "," : "\n");
  }
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      out << row[i] << (i + 1 < row.size() ? "," : "\n");
    }
  }
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

CanalNetwork load_network(const fs::path& dir) {
  const CsvTable segs = read_csv(dir / "segments.csv");
  const std::size_t c_id = segs.column("segment_id");
  const std::size_t c_idx = segs.column("vertex_index");
  const std::size_t c_x = segs.column("x_km");
  const std::size_t c_y = segs.column("y_km");

  std::map<std::string, std::vector<std::pair<int, Point>>> vertices;
  std::vector<std::string> order;
  for (const auto& row : segs.rows) {
    const std::string id = row[c_id];
    if (vertices.find(id) == vertices.end()) order.push_back(id);
    vertices[id].emplace_back(to_int(row[c_idx], "vertex_index"),
                              Point{to_double(row[c_x], "x_km"), to_double(row[c_y], "y_km")});
  }
  std::vector<CanalSegment> segments;
  for (const auto& id : order) {
    auto& vs = vertices[id];
    std::sort(vs.begin(), vs.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    std::vector<Point> pts;
    pts.reserve(vs.size());
    for (const auto& [_, p] : vs) pts.push_back(p);
    segments.emplace_back(id, std::move(pts));
  }

  std::vector<IntersectionDecl> intersections;
  if (fs::exists(dir / "intersections.csv")) {
    const CsvTable tab = read_csv(dir / "intersections.csv");
    const std::size_t a = tab.column("segment_a");
    const std::size_t aa = tab.column("arc_a_km");
    const std::size_t b = tab.column("segment_b");
    const std::size_t ba = tab.column("arc_b_km");
    for (const auto& row : tab.rows) {
      intersections.push_back({row[a], to_double(row[aa], "arc_a_km"), row[b],
                               to_double(row[ba], "arc_b_km")});
    }
  }

  std::vector<EndpointDecl> endpoints;
  if (fs::exists(dir / "endpoints.csv")) {
    const CsvTable tab = read_csv(dir / "endpoints.csv");
    const std::size_t s = tab.column("segment_id");
    const std::size_t a = tab.column("arc_km");
    const std::size_t k = tab.column("kind");
    for (const auto& row : tab.rows) {
      EndpointDecl ep;
      ep.segment = row[s];
      ep.arc = to_double(row[a], "arc_km");
      if (row[k] == "source") {
        ep.kind = EndpointKind::Source;
      } else if (row[k] == "sink") {
        ep.kind = EndpointKind::Sink;
      } else {
        throw IoError("endpoint kind must be source or sink, got '" + row[k] + "'");
      }
      endpoints.push_back(ep);
    }
  }
  return CanalNetwork(std::move(segments), std::move(intersections), std::move(endpoints));
}

void save_network(const fs::path& dir, const CanalNetwork& network) {
  std::vector<std::vector<std::string>> seg_rows;
  for (const auto& seg : network.segments()) {
    for (std::size_t i = 0; i < seg.vertices().size(); ++i) {
      seg_rows.push_back({seg.id(), std::to_string(i), format_double(seg.vertices()[i].x),
                          format_double(seg.vertices()[i].y)});
    }
  }
  write_csv(dir / "segments.csv", {"segment_id", "vertex_index", "x_km", "y_km"}, seg_rows);

  std::vector<std::vector<std::string>> isect_rows;
  for (const auto& i : network.intersections()) {
    isect_rows.push_back(
        {i.segment_a, format_double(i.arc_a), i.segment_b, format_double(i.arc_b)});
  }
  write_csv(dir / "intersections.csv", {"segment_a", "arc_a_km", "segment_b", "arc_b_km"},
            isect_rows);

  std::vector<std::vector<std::string>> ep_rows;
  for (const auto& ep : network.endpoints()) {
    ep_rows.push_back({ep.segment, format_double(ep.arc),
                       ep.kind == EndpointKind::Source ? "source" : "sink"});
  }
  write_csv(dir / "endpoints.csv", {"segment_id", "arc_km", "kind"}, ep_rows);
}

SurveyDataset load_dataset(const fs::path& households_csv, const fs::path& observations_csv) {
  SurveyDataset ds;
  const CsvTable hh = read_csv(households_csv);
  const std::size_t c_id = hh.column("household_id");
  const std::size_t c_x = hh.column("x_km");
  const std::size_t c_y = hh.column("y_km");
  const std::size_t c_g = hh.column("group");
  std::vector<std::size_t> cov_cols;
  for (std::size_t i = 0; i < hh.header.size(); ++i) {
    if (hh.header[i].size() > 1 && hh.header[i][0] == 'x' &&
        hh.header[i].find("_km") == std::string::npos) {
      cov_cols.push_back(i);
    }
  }
  for (const auto& row : hh.rows) {
    Household h;
    h.id = row[c_id];
    h.location = {to_double(row[c_x], "x_km"), to_double(row[c_y], "y_km")};
    h.group = to_int(row[c_g], "group");
    h.covariates.resize(static_cast<Eigen::Index>(cov_cols.size()));
    for (std::size_t k = 0; k < cov_cols.size(); ++k) {
      h.covariates[static_cast<Eigen::Index>(k)] = to_double(row[cov_cols[k]], hh.header[cov_cols[k]]);
    }
    ds.households.push_back(std::move(h));
  }
  const CsvTable obs = read_csv(observations_csv);
  const std::size_t o_id = obs.column("household_id");
  const std::size_t o_y = obs.column("y");
  for (const auto& row : obs.rows) {
    ds.observations.push_back({row[o_id], to_int(row[o_y], "y")});
  }
  ds.validate();
  return ds;
}

void save_dataset(const fs::path& dir, const SurveyDataset& dataset) {
  std::vector<std::string> header = {"household_id", "x_km", "y_km", "group"};
  const std::size_t p = dataset.households.empty()
                            ? 0
                            : static_cast<std::size_t>(dataset.households.front().covariates.size());
  for (std::size_t k = 1; k <= p; ++k) header.push_back("x" + std::to_string(k));
  std::vector<std::vector<std::string>> rows;
  for (const auto& h : dataset.households) {
    std::vector<std::string> row = {h.id, format_double(h.location.x),
                                    format_double(h.location.y), std::to_string(h.group)};
    for (Eigen::Index k = 0; k < h.covariates.size(); ++k) {
      row.push_back(format_double(h.covariates[k]));
    }
    rows.push_back(std::move(row));
  }
  write_csv(dir / "households.csv", header, rows);

  std::vector<std::vector<std::string>> obs_rows;
  for (const auto& o : dataset.observations) {
    obs_rows.push_back({o.household_id, std::to_string(o.outcome)});
  }
  write_csv(dir / "observations.csv", {"household_id", "y"}, obs_rows);
}

void save_draws(const fs::path& path, const ChainOutput& chain, int chain_id) {
  std::vector<std::string> header = {"chain", "iter", "divergent", "treedepth",
                                     "accept_stat", "stepsize"};
  header.insert(header.end(), chain.names.begin(), chain.names.end());
  std::vector<std::vector<std::string>> rows;
  rows.reserve(static_cast<std::size_t>(chain.draws.rows()));
  for (Eigen::Index r = 0; r < chain.draws.rows(); ++r) {
    std::vector<std::string> row = {std::to_string(chain_id), std::to_string(r + 1),
                                    std::to_string(static_cast<int>(chain.divergent[r])),
                                    std::to_string(chain.treedepth[r]),
                                    format_double(chain.accept_stat[r]),
                                    format_double(chain.stepsize[r])};
    for (Eigen::Index c = 0; c < chain.draws.cols(); ++c) {
      row.push_back(format_double(chain.draws(r, c)));
    }
    rows.push_back(std::move(row));
  }
  write_csv(path, header, rows);
}

std::vector<ChainOutput> load_draws(const std::vector<fs::path>& paths) {
  std::map<int, ChainOutput> by_chain;
  std::map<int, std::vector<std::vector<double>>> draws_by_chain;
  std::vector<std::string> names;
  for (const auto& path : paths) {
    const CsvTable tab = read_csv(path);
    const std::size_t c_chain = tab.column("chain");
    const std::size_t c_div = tab.column("divergent");
    const std::size_t c_depth = tab.column("treedepth");
    const std::size_t c_acc = tab.column("accept_stat");
    const std::size_t c_step = tab.column("stepsize");
    std::vector<std::size_t> param_cols;
    std::vector<std::string> file_names;
    for (std::size_t i = 0; i < tab.header.size(); ++i) {
      const auto& h = tab.header[i];
      if (h == "chain" || h == "iter" || h == "divergent" || h == "treedepth" ||
          h == "accept_stat" || h == "stepsize") {
        continue;
      }
      param_cols.push_back(i);
      file_names.push_back(h);
    }
    if (names.empty()) {
      names = file_names;
    } else if (names != file_names) {
      throw IoError("draws files have inconsistent parameter names");
    }
    for (const auto& row : tab.rows) {
      const int chain_id = to_int(row[c_chain], "chain");
      auto& chain = by_chain[chain_id];
      chain.names = names;
      chain.divergent.push_back(static_cast<std::uint8_t>(to_int(row[c_div], "divergent")));
      chain.treedepth.push_back(to_int(row[c_depth], "treedepth"));
      chain.accept_stat.push_back(to_double(row[c_acc], "accept_stat"));
      chain.stepsize.push_back(to_double(row[c_step], "stepsize"));
      std::vector<double> values;
      values.reserve(param_cols.size());
      for (const std::size_t c : param_cols) values.push_back(to_double(row[c], "draw"));
      draws_by_chain[chain_id].push_back(std::move(values));
    }
  }
  std::vector<ChainOutput> out;
  for (auto& [chain_id, chain] : by_chain) {
    const auto& rows = draws_by_chain[chain_id];
    chain.draws.resize(static_cast<Eigen::Index>(rows.size()),
                       static_cast<Eigen::Index>(names.size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
      for (std::size_t c = 0; c < names.size(); ++c) {
        chain.draws(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
      }
    }
    out.push_back(std::move(chain));
  }
  if (out.empty()) throw IoError("no draws found");
  return out;
}

std::vector<fs::path> resolve_draws_paths(const fs::path& arg) {
  if (fs::is_directory(arg)) {
    std::vector<fs::path> paths;
    for (const auto& entry : fs::directory_iterator(arg)) {
      const std::string name = entry.path().filename().string();
      if (name.rfind("draws_chain", 0) == 0 && entry.path().extension() == ".csv") {
        paths.push_back(entry.path());
      }
    }
    std::sort(paths.begin(), paths.end());
    if (paths.empty()) throw IoError("no draws_chain*.csv in '" + arg.string() + "'");
    return paths;
  }
  if (!fs::exists(arg)) throw IoError("draws path '" + arg.string() + "' does not exist");
  return {arg};
}

void save_fit_report(const fs::path& path, const FitReport& report) {
  std::vector<std::vector<std::string>> rows;
  auto opt = [](const std::optional<double>& v) {
    return v ? format_double(*v) : std::string("NA");
  };
  for (const auto& p : report.parameters) {
    rows.push_back({p.name, format_double(p.mean), format_double(p.sd), format_double(p.q01),
                    format_double(p.q10), format_double(p.q50), format_double(p.q90),
                    format_double(p.q99), opt(p.rhat), opt(p.ess_bulk), opt(p.ess_tail)});
  }
  write_csv(path,
            {"name", "mean", "sd", "q1", "q10", "q50", "q90", "q99", "rhat", "ess_bulk",
             "ess_tail"},
            rows);
}

}  // namespace hazardfield
