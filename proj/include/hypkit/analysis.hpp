#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "hypkit/labels.hpp"
#include "hypkit/phantom.hpp"
#include "hypkit/stats.hpp"
#include "hypkit/volume.hpp"

namespace hypkit {

// Per-class volumes in mm^3, indexed by class id (entry 0 is background).
std::vector<double> structure_volumes(const LabelMap3D& labels, std::size_t class_count);

// pv_compensated: per-class probability sum times voxel volume.
// Otherwise the argmax labels are counted.
std::vector<double> structure_volumes(const ProbabilityVolume& p, bool pv_compensated);

// 1 - |a - b| / (a + b); 1 when both are zero.
double volume_similarity(double a, double b);

// A named set of class ids whose volumes are summed.
struct VolumeGroup {
  std::string name;
  std::vector<std::uint16_t> members;
};

// Every structure on its own, then each non-empty region, then all
// structures together ("whole").
std::vector<VolumeGroup> retest_groups(const LabelScheme& scheme);

struct RetestPair {
  std::vector<double> scan1;  // per-class volumes, as from structure_volumes
  std::vector<double> scan2;
};

struct RetestRow {
  std::string name;
  ICCResult icc;
  double mean_vs = 0;
};

// ICC(A,1) over the n x 2 volume table and mean volume similarity per group.
// Needs at least 3 pairs; degenerate groups propagate the ICC error.
std::vector<RetestRow> test_retest(const std::vector<RetestPair>& pairs,
                                   const std::vector<VolumeGroup>& groups);

void write_retest_csv(const std::filesystem::path& path, const std::vector<RetestRow>& rows);

// A cohort record plus its scanner sequence version.
struct CohortEntry {
  CohortRecord record;
  std::string seq = "v1";
};

struct CoefficientEstimate {
  std::string covariate;
  double beta = 0;
  double std_error = 0;
  double p_value = 1;
};

struct RegressionResult {
  std::vector<CoefficientEstimate> coefficients;  // intercept first
  double r_squared = 0;
  std::size_t n = 0;

  // Throws UsageError for an unknown covariate name.
  const CoefficientEstimate& at(const std::string& covariate) const;
};

// OLS fit of volume ~ age_c + sex + etiv_c [+ one-hot seq], with age and eTIV
// de-meaned over the cohort. Sequence versions beyond the first (sorted)
// become indicator columns "seq_<name>". Solves the normal equations and
// falls back to QR when they are ill-conditioned; DesignError when the
// design is rank deficient or has no residual degrees of freedom. Two-sided
// t-test p-values.
RegressionResult association(const std::vector<double>& volumes,
                             const std::vector<CohortEntry>& cohort);

// Columns id,age,sex,etiv,seq. The seq column is optional on read.
void write_cohort_csv(const std::filesystem::path& path, const std::vector<CohortEntry>& cohort);
std::vector<CohortEntry> read_cohort_csv(const std::filesystem::path& path);

// Columns covariate,beta,se,p.
void write_regression_csv(const std::filesystem::path& path, const RegressionResult& r);

// Columns id followed by one column per structure name (mm^3).
struct VolumeTable {
  std::vector<std::string> structures;
  std::vector<std::string> ids;
  std::vector<std::vector<double>> rows;  // rows[i][j]: subject i, structure j

  // Column of one structure; UsageError when it is missing.
  std::vector<double> column(const std::string& structure) const;
  // Values in the order of `ids`; DataError for an id without a row.
  std::vector<double> column_for(const std::string& structure,
                                 const std::vector<std::string>& ids) const;
};

// Builds a table with one row per subject from per-class volumes.
VolumeTable volume_table(const LabelScheme& scheme, const std::vector<std::string>& ids,
                         const std::vector<std::vector<double>>& class_volumes);
void write_volume_csv(const std::filesystem::path& path, const VolumeTable& t);
VolumeTable read_volume_csv(const std::filesystem::path& path);

}  // namespace hypkit
