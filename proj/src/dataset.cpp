#include "cda/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include <json.hpp>

#include "cda/rng.hpp"

namespace cda {
namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

double parse_double(const std::string& s, std::size_t line_no, const std::string& column) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size())
    throw std::invalid_argument("line " + std::to_string(line_no) + ": column " + column + ": bad number '" + s + "'");
  return v;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string join(const std::vector<std::string>& v, const char* sep) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += sep;
    out += v[i];
  }
  return out;
}

// Columns named <prefix>1, <prefix>2, ... in order.
std::vector<std::size_t> numbered_columns(const std::unordered_map<std::string, std::size_t>& index,
                                          const std::string& prefix) {
  std::vector<std::size_t> cols;
  for (std::size_t i = 1;; ++i) {
    auto it = index.find(prefix + std::to_string(i));
    if (it == index.end()) break;
    cols.push_back(it->second);
  }
  return cols;
}

struct Row {
  int month;
  std::vector<double> x;
  int z;
  double y;
  std::vector<double> u;
};

}  // namespace

const std::vector<std::string>& default_policy_vocabulary() {
  static const std::vector<std::string> vocab = {"none", "sand_controlling", "perforation_adding", "pump_replacing",
                                                 "fracturing"};
  return vocab;
}

std::string to_string(DomainTag tag) { return tag == DomainTag::kSource ? "source" : "target"; }

double NormStats::normalize_y(double y) const { return y_constant ? y : (y - y_mean) / y_std; }
double NormStats::denormalize_y(double y) const { return y_constant ? y : y * y_std + y_mean; }

std::size_t DomainDataset::d_x() const { return episodes.empty() ? 0 : episodes.front().d_x(); }
std::size_t DomainDataset::u_dim() const { return episodes.empty() ? 0 : episodes.front().u.size(); }

std::size_t DomainDataset::record_count() const {
  std::size_t n = 0;
  for (const auto& ep : episodes) n += ep.length();
  return n;
}

void DomainDataset::validate() const {
  if (policy_vocabulary.empty()) throw std::invalid_argument("dataset: empty policy vocabulary");
  for (const auto& ep : episodes) {
    ep.validate(n_treatments());
    if (ep.d_x() != d_x()) throw std::invalid_argument("dataset: episode " + ep.id + " has a different d_x");
    if (ep.u.size() != u_dim()) throw std::invalid_argument("dataset: episode " + ep.id + " has a different u_dim");
  }
  if (norm && norm->channels() != d_x())
    throw std::invalid_argument("dataset: normalization stats do not match d_x");
}

DomainDataset parse_csv(std::istream& in, const std::vector<std::string>& vocabulary) {
  std::string line;
  if (!std::getline(in, line) || line.find_first_not_of(" \t\r") == std::string::npos)
    throw std::invalid_argument("no records");
  const auto header = split_fields(line);
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (!index.emplace(header[i], i).second) throw std::invalid_argument("duplicate column '" + header[i] + "'");
  }
  for (const char* required : {"well_id", "month", "X1", "Z", "Y"})
    if (!index.count(required)) throw std::invalid_argument(std::string("missing column '") + required + "'");
  const auto xcols = numbered_columns(index, "X");
  const auto ucols = numbered_columns(index, "U");
  if (header.size() != 4 + xcols.size() + ucols.size()) {
    for (const auto& h : header) {
      const bool numbered = (h.size() > 1 && (h[0] == 'X' || h[0] == 'U'));
      if (!numbered && h != "well_id" && h != "month" && h != "Z" && h != "Y")
        throw std::invalid_argument("unexpected column '" + h + "'");
    }
    throw std::invalid_argument("X and U columns must be numbered 1..d without gaps");
  }
  const std::size_t c_well = index["well_id"], c_month = index["month"], c_z = index["Z"], c_y = index["Y"];

  std::unordered_map<std::string, int> policy_index;
  for (std::size_t k = 0; k < vocabulary.size(); ++k) policy_index[vocabulary[k]] = static_cast<int>(k);

  std::vector<std::string> order;
  std::unordered_map<std::string, std::vector<Row>> wells;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto f = split_fields(line);
    if (f.size() != header.size())
      throw std::invalid_argument("line " + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                                  " fields, found " + std::to_string(f.size()));
    Row r;
    const double month = parse_double(f[c_month], line_no, "month");
    if (month != std::floor(month)) throw std::invalid_argument("line " + std::to_string(line_no) + ": month must be an integer");
    r.month = static_cast<int>(month);
    for (std::size_t j = 0; j < xcols.size(); ++j) r.x.push_back(parse_double(f[xcols[j]], line_no, header[xcols[j]]));
    auto it = policy_index.find(f[c_z]);
    if (it == policy_index.end())
      throw std::invalid_argument("line " + std::to_string(line_no) + ": unknown policy '" + f[c_z] +
                                  "'; vocabulary: " + join(vocabulary, ", "));
    r.z = it->second;
    r.y = parse_double(f[c_y], line_no, "Y");
    for (std::size_t j = 0; j < ucols.size(); ++j) r.u.push_back(parse_double(f[ucols[j]], line_no, header[ucols[j]]));
    auto [pos, inserted] = wells.try_emplace(f[c_well]);
    if (inserted) order.push_back(f[c_well]);
    pos->second.push_back(std::move(r));
  }
  if (order.empty()) throw std::invalid_argument("no records");

  DomainDataset data;
  data.policy_vocabulary = vocabulary;
  std::vector<std::string> gaps;
  for (const auto& id : order) {
    auto& rows = wells[id];
    std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.month < b.month; });
    bool contiguous = true;
    for (std::size_t i = 1; i < rows.size(); ++i)
      if (rows[i].month != rows[i - 1].month + 1) contiguous = false;
    if (!contiguous) {
      gaps.push_back(id);
      continue;
    }
    Episode ep;
    ep.id = id;
    ep.first_month = rows.front().month;
    ep.x = Tensor(rows.size(), xcols.size());
    ep.u = rows.front().u;
    for (std::size_t t = 0; t < rows.size(); ++t) {
      for (std::size_t j = 0; j < xcols.size(); ++j) ep.x(t, j) = rows[t].x[j];
      ep.z.push_back(rows[t].z);
      ep.y.push_back(rows[t].y);
      if (rows[t].u != ep.u)
        throw std::invalid_argument("well " + id + ": static features U change over time");
    }
    data.episodes.push_back(std::move(ep));
  }
  if (!gaps.empty()) throw std::invalid_argument("non-contiguous months for well(s): " + join(gaps, ", "));
  data.validate();
  return data;
}

DomainDataset ingest_csv(const std::filesystem::path& path, const std::vector<std::string>& vocabulary) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return parse_csv(in, vocabulary);
}

void emit_csv(const DomainDataset& data, std::ostream& out) {
  out << "well_id,month";
  for (std::size_t j = 0; j < data.d_x(); ++j) out << ",X" << j + 1;
  out << ",Z,Y";
  for (std::size_t j = 0; j < data.u_dim(); ++j) out << ",U" << j + 1;
  out << '\n';
  for (const auto& ep : data.episodes) {
    for (std::size_t t = 0; t < ep.length(); ++t) {
      out << ep.id << ',' << ep.first_month + static_cast<int>(t);
      for (std::size_t j = 0; j < ep.d_x(); ++j) out << ',' << format_double(ep.x(t, j));
      out << ',' << data.policy_vocabulary.at(static_cast<std::size_t>(ep.z[t])) << ',' << format_double(ep.y[t]);
      for (double u : ep.u) out << ',' << format_double(u);
      out << '\n';
    }
  }
}

void write_csv(const DomainDataset& data, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  emit_csv(data, out);
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::string manifest_json(const DomainDataset& data, const std::vector<std::string>& x_units) {
  nlohmann::json j;
  std::vector<std::string> xs, us;
  for (std::size_t i = 0; i < data.d_x(); ++i) xs.push_back("X" + std::to_string(i + 1));
  for (std::size_t i = 0; i < data.u_dim(); ++i) us.push_back("U" + std::to_string(i + 1));
  j["tag"] = to_string(data.tag);
  j["channels"] = {{"covariates", xs}, {"treatment", "Z"}, {"outcome", "Y"}, {"static", us}};
  j["units"] = x_units.empty() ? std::vector<std::string>(xs.size(), "") : x_units;
  j["policy_vocabulary"] = data.policy_vocabulary;
  j["episodes"] = data.episodes.size();
  j["records"] = data.record_count();
  std::vector<std::size_t> counts(data.n_treatments(), 0);
  for (const auto& ep : data.episodes)
    for (int z : ep.z) ++counts[static_cast<std::size_t>(z)];
  nlohmann::json tc = nlohmann::json::object();
  for (std::size_t k = 0; k < counts.size(); ++k) tc[data.policy_vocabulary[k]] = counts[k];
  j["treatment_counts"] = tc;
  return j.dump(2);
}

NormStats compute_norm_stats(const std::vector<Episode>& episodes) {
  if (episodes.empty()) throw std::invalid_argument("normalize: no episodes");
  const std::size_t d = episodes.front().d_x();
  NormStats s;
  s.x_mean.assign(d, 0.0);
  s.x_std.assign(d, 0.0);
  s.x_constant.assign(d, false);
  double n = 0.0;
  for (const auto& ep : episodes) {
    if (ep.d_x() != d) throw std::invalid_argument("normalize: episodes disagree on d_x");
    for (std::size_t t = 0; t < ep.length(); ++t) {
      for (std::size_t j = 0; j < d; ++j) s.x_mean[j] += ep.x(t, j);
      s.y_mean += ep.y[t];
    }
    n += static_cast<double>(ep.length());
  }
  for (double& m : s.x_mean) m /= n;
  s.y_mean /= n;
  double yv = 0.0;
  for (const auto& ep : episodes) {
    for (std::size_t t = 0; t < ep.length(); ++t) {
      for (std::size_t j = 0; j < d; ++j) s.x_std[j] += (ep.x(t, j) - s.x_mean[j]) * (ep.x(t, j) - s.x_mean[j]);
      yv += (ep.y[t] - s.y_mean) * (ep.y[t] - s.y_mean);
    }
  }
  constexpr double kMinStd = 1e-12;
  for (std::size_t j = 0; j < d; ++j) {
    s.x_std[j] = std::sqrt(s.x_std[j] / n);
    if (s.x_std[j] < kMinStd) {
      s.x_constant[j] = true;
      s.x_std[j] = 1.0;
      s.x_mean[j] = 0.0;
    }
  }
  s.y_std = std::sqrt(yv / n);
  if (s.y_std < kMinStd) {
    s.y_constant = true;
    s.y_std = 1.0;
    s.y_mean = 0.0;
  }
  return s;
}

Normalized normalize(const DomainDataset& data, const std::optional<NormStats>& stats) {
  NormStats s = stats ? *stats : compute_norm_stats(data.episodes);
  if (s.channels() != data.d_x())
    throw std::invalid_argument("normalize: stats have " + std::to_string(s.channels()) + " channels, dataset has " +
                                std::to_string(data.d_x()));
  Normalized out{data, s};
  for (auto& ep : out.data.episodes) {
    for (std::size_t t = 0; t < ep.length(); ++t) {
      for (std::size_t j = 0; j < ep.d_x(); ++j)
        if (!s.x_constant[j]) ep.x(t, j) = (ep.x(t, j) - s.x_mean[j]) / s.x_std[j];
      ep.y[t] = s.normalize_y(ep.y[t]);
    }
    ep.noise.reset();
  }
  out.data.norm = s;
  return out;
}

DomainDataset denormalize(const DomainDataset& data, const NormStats& s) {
  if (s.channels() != data.d_x()) throw std::invalid_argument("denormalize: channel count mismatch");
  DomainDataset out = data;
  for (auto& ep : out.episodes) {
    for (std::size_t t = 0; t < ep.length(); ++t) {
      for (std::size_t j = 0; j < ep.d_x(); ++j)
        if (!s.x_constant[j]) ep.x(t, j) = ep.x(t, j) * s.x_std[j] + s.x_mean[j];
      ep.y[t] = s.denormalize_y(ep.y[t]);
    }
  }
  out.norm.reset();
  return out;
}

SplitResult split(const DomainDataset& data, const SplitPlan& plan) {
  SplitResult r;
  r.train.tag = r.eval.tag = data.tag;
  r.train.policy_vocabulary = r.eval.policy_vocabulary = data.policy_vocabulary;
  r.train.norm = r.eval.norm = data.norm;
  if (plan.mode == SplitMode::kInsideWell) {
    if (plan.tau == 0) throw std::invalid_argument("split: tau must be positive");
    for (const auto& ep : data.episodes) {
      if (plan.tau >= ep.length())
        throw std::invalid_argument("split: tau=" + std::to_string(plan.tau) + " is not shorter than episode " +
                                    ep.id + " (length " + std::to_string(ep.length()) + ")");
      const std::size_t cut = ep.length() - plan.tau;
      r.train.episodes.push_back(ep.slice(0, cut));
      r.eval.episodes.push_back(ep.slice(cut, ep.length()));
    }
    return r;
  }
  if (!(plan.train_well_fraction > 0.0 && plan.train_well_fraction < 1.0))
    throw std::invalid_argument("split: train_well_fraction must lie in (0, 1)");
  const std::size_t n = data.episodes.size();
  if (n < 2) throw std::invalid_argument("split: cross-well split needs at least two wells");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(plan.seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  const auto want = static_cast<std::size_t>(std::llround(plan.train_well_fraction * static_cast<double>(n)));
  const std::size_t n_train = std::clamp<std::size_t>(want, 1, n - 1);
  std::vector<bool> is_train(n, false);
  for (std::size_t i = 0; i < n_train; ++i) is_train[idx[i]] = true;
  for (std::size_t i = 0; i < n; ++i) (is_train[i] ? r.train : r.eval).episodes.push_back(data.episodes[i]);
  return r;
}

PolicyPartition policy_partition(const DomainDataset& data) {
  if (data.policy_vocabulary.empty()) throw std::invalid_argument("policy_partition: empty vocabulary");
  PolicyPartition p;
  for (std::size_t k = 1; k < data.policy_vocabulary.size(); ++k) {
    const auto& name = data.policy_vocabulary[k];
    DomainDataset part;
    part.tag = data.tag;
    part.policy_vocabulary = data.policy_vocabulary;
    part.norm = data.norm;
    for (const auto& ep : data.episodes)
      if (std::find(ep.z.begin(), ep.z.end(), static_cast<int>(k)) != ep.z.end()) part.episodes.push_back(ep);
    p.well_counts[name] = part.episodes.size();
    p.record_counts[name] = part.record_count();
    p.parts.emplace(name, std::move(part));
  }
  return p;
}

}  // namespace cda
