#include "hypkit/analysis.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "hypkit/errors.hpp"

namespace hypkit {

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    rows.push_back(split_csv(line));
  }
  if (rows.empty()) throw FormatError(path.string() + ": empty CSV");
  return rows;
}

double parse_number(const std::string& s, const std::filesystem::path& path) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw FormatError(path.string() + ": '" + s + "' is not a number");
  }
}

void check_cell(const std::string& s) {
  if (s.find_first_of(",\n\r") != std::string::npos)
    throw DataError("CSV cell '" + s + "' contains a separator");
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.precision(12);
  return out;
}

}  // namespace

std::vector<double> structure_volumes(const LabelMap3D& labels, std::size_t class_count) {
  const double vv = std::pow(labels.voxel_size_mm, 3);
  std::vector<std::size_t> counts(class_count, 0);
  for (auto l : labels.labels) {
    if (l >= class_count)
      throw DataError("label " + std::to_string(l) + " outside the " +
                      std::to_string(class_count) + "-class scheme");
    ++counts[l];
  }
  std::vector<double> out(class_count);
  for (std::size_t c = 0; c < class_count; ++c) out[c] = static_cast<double>(counts[c]) * vv;
  return out;
}

std::vector<double> structure_volumes(const ProbabilityVolume& p, bool pv_compensated) {
  if (!pv_compensated) return structure_volumes(argmax_labels(p), p.class_count);
  const double vv = std::pow(p.voxel_size_mm, 3);
  const std::size_t n = p.dims.count();
  std::vector<double> out(p.class_count);
  for (std::size_t c = 0; c < p.class_count; ++c) {
    const float* ch = p.channel(c);
    double s = 0;
    for (std::size_t v = 0; v < n; ++v) s += ch[v];
    out[c] = s * vv;
  }
  return out;
}

double volume_similarity(double a, double b) {
  if (a == 0 && b == 0) return 1.0;
  return 1.0 - std::abs(a - b) / (a + b);
}

std::vector<VolumeGroup> retest_groups(const LabelScheme& scheme) {
  std::vector<VolumeGroup> out;
  VolumeGroup whole{"whole", {}};
  for (const auto& s : scheme.structures()) {
    out.push_back({s.name, {s.id}});
    whole.members.push_back(s.id);
  }
  for (Region r : {Region::hypothalamic, Region::optic, Region::others}) {
    auto m = scheme.region_members(r);
    if (!m.empty()) out.push_back({to_string(r), std::move(m)});
  }
  out.push_back(std::move(whole));
  return out;
}

std::vector<RetestRow> test_retest(const std::vector<RetestPair>& pairs,
                                   const std::vector<VolumeGroup>& groups) {
  if (pairs.size() < 3) throw ShapeError("test-retest needs at least 3 pairs");
  const std::size_t c = pairs.front().scan1.size();
  for (const auto& p : pairs)
    if (p.scan1.size() != c || p.scan2.size() != c)
      throw ShapeError("test-retest pairs differ in class count");
  std::vector<RetestRow> out;
  for (const auto& g : groups) {
    Table t;
    t.rows = pairs.size();
    t.cols = 2;
    double vs = 0;
    for (const auto& p : pairs) {
      double a = 0, b = 0;
      for (auto m : g.members) {
        if (m >= c) throw ShapeError("group " + g.name + " refers to class " + std::to_string(m));
        a += p.scan1[m];
        b += p.scan2[m];
      }
      t.values.push_back(a);
      t.values.push_back(b);
      vs += volume_similarity(a, b);
    }
    RetestRow row;
    row.name = g.name;
    row.icc = icc_a1(t);
    row.mean_vs = vs / static_cast<double>(pairs.size());
    out.push_back(row);
  }
  return out;
}

void write_retest_csv(const std::filesystem::path& path, const std::vector<RetestRow>& rows) {
  auto out = open_out(path);
  out << "region,icc,ci_low,ci_high,vs\n";
  for (const auto& r : rows)
    out << r.name << ',' << r.icc.estimate << ',' << r.icc.ci_low << ',' << r.icc.ci_high << ','
        << r.mean_vs << '\n';
}

const CoefficientEstimate& RegressionResult::at(const std::string& covariate) const {
  for (const auto& c : coefficients)
    if (c.covariate == covariate) return c;
  throw UsageError("no coefficient named '" + covariate + "'");
}

RegressionResult association(const std::vector<double>& volumes,
                             const std::vector<CohortEntry>& cohort) {
  const std::size_t n = volumes.size();
  if (cohort.size() != n) throw ShapeError("volume and cohort lengths differ");
  if (n == 0) throw DesignError("empty cohort");
  for (const auto& e : cohort) {
    if (e.record.sex != 0 && e.record.sex != 1)
      throw DataError("subject " + e.record.id + " has sex outside {0,1}");
    if (!std::isfinite(e.record.age) || !(e.record.etiv > 0))
      throw DataError("subject " + e.record.id + " has invalid age or eTIV");
  }
  for (double v : volumes)
    if (!std::isfinite(v)) throw DataError("non-finite volume");

  std::set<std::string> levels;
  for (const auto& e : cohort) levels.insert(e.seq);
  std::vector<std::string> names = {"intercept", "age", "sex", "etiv"};
  for (auto it = std::next(levels.begin()); it != levels.end(); ++it) names.push_back("seq_" + *it);
  const std::size_t p = names.size();

  double age_mean = 0, etiv_mean = 0;
  for (const auto& e : cohort) {
    age_mean += e.record.age / static_cast<double>(n);
    etiv_mean += e.record.etiv / static_cast<double>(n);
  }
  Eigen::MatrixXd x(n, p);
  Eigen::VectorXd y(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& e = cohort[i];
    x(i, 0) = 1.0;
    x(i, 1) = e.record.age - age_mean;
    x(i, 2) = e.record.sex;
    x(i, 3) = e.record.etiv - etiv_mean;
    for (std::size_t j = 4; j < p; ++j) x(i, j) = ("seq_" + e.seq) == names[j] ? 1.0 : 0.0;
    y(i) = volumes[i];
  }
  if (n <= p)
    throw DesignError("association needs more subjects (" + std::to_string(n) +
                      ") than coefficients (" + std::to_string(p) + ")");

  // Column scaling keeps the rank test meaningful when eTIV is in mm^3.
  Eigen::VectorXd scale(p);
  for (std::size_t j = 0; j < p; ++j) {
    const double s = x.col(j).norm();
    scale(j) = s > 0 ? s : 1.0;
  }
  const Eigen::MatrixXd xs = x * scale.cwiseInverse().asDiagonal();
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(xs);
  qr.setThreshold(1e-10);
  if (static_cast<std::size_t>(qr.rank()) < p)
    throw DesignError("design matrix is rank deficient (rank " + std::to_string(qr.rank()) +
                      " of " + std::to_string(p) + ")");

  const Eigen::MatrixXd xtx = xs.transpose() * xs;
  Eigen::LLT<Eigen::MatrixXd> llt(xtx);
  Eigen::VectorXd bs;
  Eigen::MatrixXd cov;  // (Xs^T Xs)^-1
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p));
  const double rcond = llt.info() == Eigen::Success ? llt.rcond() : 0.0;
  if (rcond > 1e-12) {
    bs = llt.solve(xs.transpose() * y);
    cov = llt.solve(eye);
  } else {
    bs = qr.solve(y);
    const Eigen::MatrixXd r = qr.matrixR().topLeftCorner(p, p).triangularView<Eigen::Upper>();
    const Eigen::MatrixXd rinv = r.triangularView<Eigen::Upper>().solve(eye);
    const auto perm = qr.colsPermutation();
    cov = perm * (rinv * rinv.transpose()) * perm.transpose();
  }

  const Eigen::VectorXd resid = y - xs * bs;
  const double rss = resid.squaredNorm();
  const double ybar = y.mean();
  const double tss = (y.array() - ybar).square().sum();
  const double df = static_cast<double>(n - p);
  const double sigma2 = rss / df;

  RegressionResult out;
  out.n = n;
  out.r_squared = tss > 0 ? std::clamp(1.0 - rss / tss, 0.0, 1.0) : 1.0;
  const boost::math::students_t_distribution<double> t_dist(df);
  for (std::size_t j = 0; j < p; ++j) {
    CoefficientEstimate c;
    c.covariate = names[j];
    c.beta = bs(j) / scale(j);
    c.std_error = std::sqrt(std::max(0.0, sigma2 * cov(j, j))) / scale(j);
    if (c.std_error > 0) {
      const double t = std::abs(c.beta / c.std_error);
      c.p_value = std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(t_dist, t)));
    } else {
      c.p_value = c.beta == 0 ? 1.0 : 0.0;
    }
    out.coefficients.push_back(c);
  }
  return out;
}

void write_cohort_csv(const std::filesystem::path& path, const std::vector<CohortEntry>& cohort) {
  auto out = open_out(path);
  out << "id,age,sex,etiv,seq\n";
  for (const auto& e : cohort) {
    check_cell(e.record.id);
    check_cell(e.seq);
    out << e.record.id << ',' << e.record.age << ',' << e.record.sex << ',' << e.record.etiv << ','
        << e.seq << '\n';
  }
}

std::vector<CohortEntry> read_cohort_csv(const std::filesystem::path& path) {
  const auto rows = read_csv(path);
  const auto& h = rows.front();
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < h.size(); ++i) col[h[i]] = i;
  for (const char* k : {"id", "age", "sex", "etiv"})
    if (!col.count(k)) throw FormatError(path.string() + ": missing column '" + k + "'");
  std::vector<CohortEntry> out;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.size() != h.size())
      throw FormatError(path.string() + ": row " + std::to_string(r) + " has " +
                        std::to_string(row.size()) + " cells, header has " +
                        std::to_string(h.size()));
    CohortEntry e;
    e.record.id = row[col["id"]];
    e.record.age = parse_number(row[col["age"]], path);
    const double sex = parse_number(row[col["sex"]], path);
    if (sex != 0 && sex != 1) throw DataError(path.string() + ": sex must be 0 or 1");
    e.record.sex = static_cast<int>(sex);
    e.record.etiv = parse_number(row[col["etiv"]], path);
    if (col.count("seq")) e.seq = row[col["seq"]];
    out.push_back(std::move(e));
  }
  return out;
}

void write_regression_csv(const std::filesystem::path& path, const RegressionResult& r) {
  auto out = open_out(path);
  out << "covariate,beta,se,p\n";
  for (const auto& c : r.coefficients)
    out << c.covariate << ',' << c.beta << ',' << c.std_error << ',' << c.p_value << '\n';
}

std::vector<double> VolumeTable::column(const std::string& structure) const {
  const auto it = std::find(structures.begin(), structures.end(), structure);
  if (it == structures.end()) throw UsageError("no volume column '" + structure + "'");
  const auto j = static_cast<std::size_t>(it - structures.begin());
  std::vector<double> out;
  for (const auto& r : rows) out.push_back(r[j]);
  return out;
}

std::vector<double> VolumeTable::column_for(const std::string& structure,
                                            const std::vector<std::string>& order) const {
  const auto all = column(structure);
  std::map<std::string, double> by_id;
  for (std::size_t i = 0; i < ids.size(); ++i) by_id[ids[i]] = all[i];
  std::vector<double> out;
  for (const auto& id : order) {
    const auto it = by_id.find(id);
    if (it == by_id.end()) throw DataError("no volume row for subject '" + id + "'");
    out.push_back(it->second);
  }
  return out;
}

VolumeTable volume_table(const LabelScheme& scheme, const std::vector<std::string>& ids,
                         const std::vector<std::vector<double>>& class_volumes) {
  if (ids.size() != class_volumes.size()) throw ShapeError("ids and volume rows differ in length");
  VolumeTable t;
  for (const auto& s : scheme.structures()) t.structures.push_back(s.name);
  t.ids = ids;
  for (const auto& v : class_volumes) {
    if (v.size() != scheme.class_count()) throw ShapeError("volume row has the wrong class count");
    std::vector<double> row;
    for (const auto& s : scheme.structures()) row.push_back(v[s.id]);
    t.rows.push_back(std::move(row));
  }
  return t;
}

void write_volume_csv(const std::filesystem::path& path, const VolumeTable& t) {
  auto out = open_out(path);
  out << "id";
  for (const auto& s : t.structures) {
    check_cell(s);
    out << ',' << s;
  }
  out << '\n';
  for (std::size_t i = 0; i < t.ids.size(); ++i) {
    check_cell(t.ids[i]);
    out << t.ids[i];
    for (double v : t.rows[i]) out << ',' << v;
    out << '\n';
  }
}

VolumeTable read_volume_csv(const std::filesystem::path& path) {
  const auto rows = read_csv(path);
  const auto& h = rows.front();
  if (h.empty() || h[0] != "id") throw FormatError(path.string() + ": first column must be 'id'");
  VolumeTable t;
  t.structures.assign(h.begin() + 1, h.end());
  for (std::size_t r = 1; r < rows.size(); ++r) {
    if (rows[r].size() != h.size())
      throw FormatError(path.string() + ": row " + std::to_string(r) + " has the wrong cell count");
    t.ids.push_back(rows[r][0]);
    std::vector<double> row;
    for (std::size_t j = 1; j < h.size(); ++j) row.push_back(parse_number(rows[r][j], path));
    t.rows.push_back(std::move(row));
  }
  return t;
}

}  // namespace hypkit
