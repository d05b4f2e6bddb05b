#include "rndiff/radiomics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <stdexcept>

#include "json.hpp"
#include "rndiff/csv.hpp"

namespace rndiff {

int FeatureTable::column_index(const std::string& name) const {
  for (std::size_t c = 0; c < columns.size(); ++c)
    if (columns[c].name == name) return static_cast<int>(c);
  return -1;
}

void check_feature_table(const FeatureTable& table) {
  if (table.values.size() !=
      static_cast<std::size_t>(table.rows()) * table.columns.size())
    throw std::invalid_argument("feature table: matrix does not match rows x cols");
  std::set<std::string> names;
  for (const auto& col : table.columns)
    if (!names.insert(col.name).second)
      throw std::invalid_argument("feature table: duplicate column " + col.name);
}

namespace {

std::vector<double> masked_values(const Volume3D& image, const Volume3D& mask) {
  if (!same_grid(image, mask))
    throw std::invalid_argument("radiomics: image and mask grids differ");
  std::vector<double> vals;
  for (std::size_t i = 0; i < mask.voxels.size(); ++i)
    if (mask.voxels[i] > 0.5) vals.push_back(image.voxels[i]);
  if (vals.empty()) throw std::invalid_argument("radiomics: empty mask");
  return vals;
}

/// Rank-based percentile: linear interpolation at q*(n-1) over sorted values.
double percentile(const std::vector<double>& sorted, double q) {
  const double h = q * (static_cast<double>(sorted.size()) - 1.0);
  const std::size_t lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = h - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

int quantize(double v, double lo, double range, int bins) {
  if (range <= 0.0) return 0;
  const int b = static_cast<int>((v - lo) / range * bins);
  return std::min(std::max(b, 0), bins - 1);
}

}  // namespace

NamedFeatures first_order(const Volume3D& image, const Volume3D& mask) {
  std::vector<double> vals = masked_values(image, mask);
  const double n = static_cast<double>(vals.size());
  std::sort(vals.begin(), vals.end());

  double sum = 0.0, energy = 0.0;
  for (double v : vals) {
    sum += v;
    energy += v * v;
  }
  const double mean = sum / n;
  double m2 = 0.0, m3 = 0.0, m4 = 0.0;
  for (double v : vals) {
    const double d = v - mean;
    m2 += d * d;
    m3 += d * d * d;
    m4 += d * d * d * d;
  }
  m2 /= n;
  m3 /= n;
  m4 /= n;
  const double sd = std::sqrt(m2);
  const double skewness = sd > 0.0 ? m3 / (sd * sd * sd) : 0.0;
  const double kurtosis = m2 > 0.0 ? m4 / (m2 * m2) - 3.0 : 0.0;

  const double lo = vals.front();
  const double hi = vals.back();
  const double range = hi - lo;
  double entropy = 0.0;
  if (range > 0.0) {
    constexpr int kBins = 32;
    std::array<double, kBins> counts{};
    for (double v : vals) ++counts[quantize(v, lo, range, kBins)];
    for (double c : counts)
      if (c > 0.0) {
        const double p = c / n;
        entropy -= p * std::log2(p);
      }
  }

  return {
      {"fo_mean", mean},
      {"fo_median", percentile(vals, 0.5)},
      {"fo_minimum", lo},
      {"fo_maximum", hi},
      {"fo_range", range},
      {"fo_variance", m2},
      {"fo_skewness", skewness},
      {"fo_kurtosis", kurtosis},
      {"fo_energy", energy},
      {"fo_entropy", entropy},
      {"fo_p10", percentile(vals, 0.10)},
      {"fo_p90", percentile(vals, 0.90)},
      {"fo_iqr", percentile(vals, 0.75) - percentile(vals, 0.25)},
  };
}

NamedFeatures shape3d(const Volume3D& mask) {
  const double sp = mask.spacing[0];
  if (std::abs(mask.spacing[1] - sp) > 1e-9 * sp ||
      std::abs(mask.spacing[2] - sp) > 1e-9 * sp)
    throw std::invalid_argument("shape3d: spacing must be isotropic");

  std::vector<std::array<int, 3>> fg;
  for (int z = 0; z < mask.dims[2]; ++z)
    for (int y = 0; y < mask.dims[1]; ++y)
      for (int x = 0; x < mask.dims[0]; ++x)
        if (mask.at(x, y, z) > 0.5) fg.push_back({x, y, z});
  if (fg.empty()) throw std::invalid_argument("shape3d: empty mask");

  auto is_fg = [&](int x, int y, int z) {
    return mask.in_bounds(x, y, z) && mask.at(x, y, z) > 0.5;
  };
  const std::array<std::array<int, 3>, 6> faces{{{1, 0, 0},
                                                 {-1, 0, 0},
                                                 {0, 1, 0},
                                                 {0, -1, 0},
                                                 {0, 0, 1},
                                                 {0, 0, -1}}};
  long exposed = 0;
  std::vector<std::array<int, 3>> surface;
  for (const auto& p : fg) {
    bool on_surface = false;
    for (const auto& f : faces)
      if (!is_fg(p[0] + f[0], p[1] + f[1], p[2] + f[2])) {
        ++exposed;
        on_surface = true;
      }
    if (on_surface) surface.push_back(p);
  }

  const double volume = static_cast<double>(fg.size()) * sp * sp * sp;
  const double area = static_cast<double>(exposed) * sp * sp;
  const double sphericity =
      std::cbrt(M_PI) * std::pow(6.0 * volume, 2.0 / 3.0) / area;

  double max_d2 = 0.0;
  for (std::size_t i = 0; i < surface.size(); ++i)
    for (std::size_t j = i + 1; j < surface.size(); ++j) {
      const double dx = surface[i][0] - surface[j][0];
      const double dy = surface[i][1] - surface[j][1];
      const double dz = surface[i][2] - surface[j][2];
      max_d2 = std::max(max_d2, dx * dx + dy * dy + dz * dz);
    }
  const double max_diameter = std::sqrt(max_d2) * sp;

  // Principal-axis ratios from the population covariance of the point cloud.
  Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
  for (const auto& p : fg)
    centroid += Eigen::Vector3d(p[0], p[1], p[2]);
  centroid /= static_cast<double>(fg.size());
  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (const auto& p : fg) {
    Eigen::Vector3d d = Eigen::Vector3d(p[0], p[1], p[2]) - centroid;
    cov += d * d.transpose();
  }
  cov *= sp * sp / static_cast<double>(fg.size());
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> solver(cov);
  Eigen::Vector3d lam = solver.eigenvalues();  // ascending
  for (int i = 0; i < 3; ++i) lam[i] = std::max(lam[i], 0.0);
  double elongation = 1.0, flatness = 1.0;
  if (lam[2] > 0.0) {
    elongation = std::sqrt(lam[1] / lam[2]);
    flatness = std::sqrt(lam[0] / lam[2]);
  }

  return {
      {"shape_volume", volume},
      {"shape_surface_area", area},
      {"shape_sphericity", sphericity},
      {"shape_max_diameter", max_diameter},
      {"shape_elongation", elongation},
      {"shape_flatness", flatness},
  };
}

const std::vector<std::array<int, 3>>& glcm_directions() {
  static const std::vector<std::array<int, 3>> dirs = [] {
    std::vector<std::array<int, 3>> d;
    for (int dz = -1; dz <= 1; ++dz)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          if (dx == 0 && dy == 0 && dz == 0) continue;
          // Keep one representative per +-pair: first nonzero component > 0.
          if (dz > 0 || (dz == 0 && (dy > 0 || (dy == 0 && dx > 0))))
            d.push_back({dx, dy, dz});
        }
    return d;
  }();
  return dirs;
}

std::vector<double> glcm_matrix(const Volume3D& image, const Volume3D& mask,
                                int bins, std::array<int, 3> offset) {
  if (bins < 2) throw std::invalid_argument("glcm: bins must be at least 2");
  std::vector<double> vals = masked_values(image, mask);
  if (vals.size() < 2)
    throw std::invalid_argument("glcm: mask is degenerate (needs >= 2 voxels)");
  const auto [lo_it, hi_it] = std::minmax_element(vals.begin(), vals.end());
  const double lo = *lo_it;
  const double range = *hi_it - lo;

  std::vector<double> m(static_cast<std::size_t>(bins) * bins, 0.0);
  double total = 0.0;
  for (int z = 0; z < mask.dims[2]; ++z)
    for (int y = 0; y < mask.dims[1]; ++y)
      for (int x = 0; x < mask.dims[0]; ++x) {
        if (mask.at(x, y, z) <= 0.5) continue;
        const int nx = x + offset[0], ny = y + offset[1], nz = z + offset[2];
        if (!mask.in_bounds(nx, ny, nz) || mask.at(nx, ny, nz) <= 0.5) continue;
        const int a = quantize(image.at(x, y, z), lo, range, bins);
        const int b = quantize(image.at(nx, ny, nz), lo, range, bins);
        m[static_cast<std::size_t>(a) * bins + b] += 1.0;
        m[static_cast<std::size_t>(b) * bins + a] += 1.0;  // symmetrized
        total += 2.0;
      }
  if (total > 0.0)
    for (double& v : m) v /= total;
  return m;
}

namespace {

struct GlcmFeatures {
  double contrast = 0, correlation = 0, energy = 0, homogeneity = 0, entropy = 0;
};

GlcmFeatures glcm_features_from_matrix(const std::vector<double>& m, int bins) {
  GlcmFeatures f;
  std::vector<double> marginal(bins, 0.0);
  for (int i = 0; i < bins; ++i)
    for (int j = 0; j < bins; ++j) marginal[i] += m[static_cast<std::size_t>(i) * bins + j];
  double mu = 0.0;
  for (int i = 0; i < bins; ++i) mu += i * marginal[i];
  double var = 0.0;
  for (int i = 0; i < bins; ++i) var += (i - mu) * (i - mu) * marginal[i];

  double corr_num = 0.0;
  for (int i = 0; i < bins; ++i)
    for (int j = 0; j < bins; ++j) {
      const double p = m[static_cast<std::size_t>(i) * bins + j];
      if (p <= 0.0) continue;
      f.contrast += p * (i - j) * (i - j);
      f.energy += p * p;
      f.homogeneity += p / (1.0 + std::abs(i - j));
      f.entropy -= p * std::log2(p);
      corr_num += p * (i - mu) * (j - mu);
    }
  f.correlation = var > 0.0 ? corr_num / var : 1.0;
  return f;
}

}  // namespace

NamedFeatures glcm(const Volume3D& image, const Volume3D& mask, int bins,
                   int distance) {
  if (distance < 1) throw std::invalid_argument("glcm: distance must be >= 1");
  GlcmFeatures acc;
  int used = 0;
  for (const auto& dir : glcm_directions()) {
    std::vector<double> m = glcm_matrix(
        image, mask, bins,
        {dir[0] * distance, dir[1] * distance, dir[2] * distance});
    double total = 0.0;
    for (double v : m) total += v;
    if (total <= 0.0) continue;  // no co-occurring pair along this direction
    GlcmFeatures f = glcm_features_from_matrix(m, bins);
    acc.contrast += f.contrast;
    acc.correlation += f.correlation;
    acc.energy += f.energy;
    acc.homogeneity += f.homogeneity;
    acc.entropy += f.entropy;
    ++used;
  }
  if (used == 0)
    throw std::invalid_argument("glcm: mask is degenerate (no co-occurring pairs)");
  return {
      {"glcm_contrast", acc.contrast / used},
      {"glcm_correlation", acc.correlation / used},
      {"glcm_joint_energy", acc.energy / used},
      {"glcm_homogeneity", acc.homogeneity / used},
      {"glcm_joint_entropy", acc.entropy / used},
  };
}

FeatureTable extract_all(const std::vector<CroppedSample>& samples,
                         const std::vector<ClinicalRecord>& clinical,
                         const std::vector<std::string>& ids,
                         const ClinicalVocabulary& vocab,
                         const ClinicalStats& stats, int glcm_bins) {
  if (samples.size() != clinical.size() || samples.size() != ids.size())
    throw std::invalid_argument("extract_all: samples, clinical, ids lengths differ");

  FeatureTable table;
  table.row_ids = ids;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    try {
      NamedFeatures row = first_order(samples[i].image, samples[i].mask);
      NamedFeatures shape = shape3d(samples[i].mask);
      NamedFeatures texture =
          glcm(samples[i].image, samples[i].mask, glcm_bins, 1);
      row.insert(row.end(), shape.begin(), shape.end());
      row.insert(row.end(), texture.begin(), texture.end());
      std::vector<double> clin = encode_clinical(clinical[i], vocab, stats);

      if (i == 0) {
        for (const auto& [name, v] : row)
          table.columns.push_back({name, "radiomic"});
        for (const std::string& name : clinical_feature_names(vocab))
          table.columns.push_back({name, "clinical"});
      }
      for (const auto& [name, v] : row) table.values.push_back(v);
      table.values.insert(table.values.end(), clin.begin(), clin.end());
    } catch (const std::exception& e) {
      throw std::runtime_error(ids[i] + ": " + e.what());
    }
  }
  check_feature_table(table);
  return table;
}

void write_feature_table(const FeatureTable& table, const std::string& csv_path,
                         const std::string& sidecar_path,
                         const std::string& extra_metadata_json) {
  check_feature_table(table);
  std::ofstream csv(csv_path, std::ios::binary);
  if (!csv) throw std::runtime_error("cannot write " + csv_path);
  csv << "id";
  for (const auto& col : table.columns) csv << ',' << col.name;
  csv << '\n';
  for (int r = 0; r < table.rows(); ++r) {
    csv << table.row_ids[r];
    for (int c = 0; c < table.cols(); ++c) csv << ',' << format_g17(table.at(r, c));
    csv << '\n';
  }

  nlohmann::ordered_json meta = nlohmann::ordered_json::object();
  nlohmann::ordered_json extra =
      nlohmann::ordered_json::parse(extra_metadata_json);
  for (auto& [k, v] : extra.items()) meta[k] = v;
  nlohmann::ordered_json cols = nlohmann::ordered_json::array();
  for (const auto& col : table.columns)
    cols.push_back({{"name", col.name}, {"provenance", col.provenance}});
  meta["columns"] = cols;
  std::ofstream side(sidecar_path, std::ios::binary);
  if (!side) throw std::runtime_error("cannot write " + sidecar_path);
  side << meta.dump(2) << '\n';
}

FeatureTable read_feature_table(const std::string& csv_path,
                                const std::string& sidecar_path) {
  std::ifstream side(sidecar_path, std::ios::binary);
  if (!side) throw std::runtime_error("cannot read " + sidecar_path);
  nlohmann::json meta = nlohmann::json::parse(side);

  FeatureTable table;
  for (const auto& col : meta.at("columns"))
    table.columns.push_back({col.at("name").get<std::string>(),
                             col.at("provenance").get<std::string>()});

  std::vector<std::vector<std::string>> rows = read_csv(csv_path);
  if (rows.empty()) throw std::runtime_error(csv_path + ": empty feature csv");
  if (rows[0].size() != table.columns.size() + 1)
    throw std::runtime_error(csv_path + ": header does not match sidecar columns");
  for (std::size_t c = 0; c < table.columns.size(); ++c)
    if (rows[0][c + 1] != table.columns[c].name)
      throw std::runtime_error(csv_path + ": column order differs from sidecar");
  for (std::size_t r = 1; r < rows.size(); ++r) {
    if (rows[r].size() != rows[0].size())
      throw std::runtime_error(csv_path + ": ragged row " + std::to_string(r));
    table.row_ids.push_back(rows[r][0]);
    for (std::size_t c = 1; c < rows[r].size(); ++c)
      table.values.push_back(std::stod(rows[r][c]));
  }
  check_feature_table(table);
  return table;
}

}  // namespace rndiff
