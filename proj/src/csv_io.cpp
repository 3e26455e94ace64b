#include "sysid/csv_io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace sysid {

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string format_observations_csv(const Observations& obs) {
  std::ostringstream os;
  os << "t";
  for (int c = 0; c < obs.state_dim(); ++c) os << ",x" << (c + 1);
  os << "\n";
  for (int s = 0; s < obs.sample_count(); ++s) {
    os << format_double(obs.times(s));
    for (int c = 0; c < obs.state_dim(); ++c) {
      os << ",";
      if (obs.mask(s, c) != 0) os << format_double(obs.values(s, c));
    }
    os << "\n";
  }
  return os.str();
}

std::string format_states_csv(const Eigen::VectorXd& times, const Eigen::MatrixXd& values) {
  Observations obs;
  obs.times = times;
  obs.values = values;
  obs.mask = Eigen::MatrixXi::Ones(values.rows(), values.cols());
  return format_observations_csv(obs);
}

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

Observations parse_observations_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("empty observation file");
  const auto header = split_line(line);
  if (header.empty() || header[0] != "t")
    throw std::runtime_error("observation file must start with a 't' column");
  const int d = static_cast<int>(header.size()) - 1;
  if (d < 1) throw std::runtime_error("observation file has no state columns");

  std::vector<double> times;
  std::vector<std::vector<std::pair<bool, double>>> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto cells = split_line(line);
    if (static_cast<int>(cells.size()) != d + 1)
      throw std::runtime_error("observation row has wrong column count");
    times.push_back(std::stod(cells[0]));
    std::vector<std::pair<bool, double>> row;
    for (int c = 0; c < d; ++c) {
      const std::string& cell = cells[static_cast<std::size_t>(c) + 1];
      if (cell.empty())
        row.emplace_back(false, 0.0);
      else
        row.emplace_back(true, std::stod(cell));
    }
    rows.push_back(std::move(row));
  }
  const int m = static_cast<int>(times.size());
  if (m < 2) throw std::runtime_error("observation file needs at least two rows");

  Observations obs;
  obs.times = Eigen::Map<Eigen::VectorXd>(times.data(), m);
  obs.values = Eigen::MatrixXd::Zero(m, d);
  obs.mask = Eigen::MatrixXi::Zero(m, d);
  for (int s = 0; s < m; ++s)
    for (int c = 0; c < d; ++c) {
      const auto& [present, value] = rows[static_cast<std::size_t>(s)][static_cast<std::size_t>(c)];
      if (present) {
        obs.values(s, c) = value;
        obs.mask(s, c) = 1;
      }
    }
  return obs;
}

Observations read_observations_csv(const std::filesystem::path& path) {
  return parse_observations_csv(read_file(path));
}

void atomic_write(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + tmp.string());
    os << content;
  }
  std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

}  // namespace sysid
