#include "rndiff/cohort.hpp"

#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "rndiff/csv.hpp"
#include "rndiff/nifti.hpp"

namespace fs = std::filesystem;

namespace rndiff {
namespace {

const char* kIndexHeader =
    "id,label,age,sex,primary,systemic,recurrence_days,image,mask";

double parse_num(const std::string& s, const std::string& what) {
  try {
    size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error("cohort index: bad numeric field '" + s +
                             "' for " + what);
  }
}

bool filename_safe(const std::string& id) {
  if (id.empty()) return false;
  for (char c : id) {
    bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
              (c >= '0' && c <= '9') || c == '_' || c == '-';
    if (!ok) return false;
  }
  return true;
}

}  // namespace

std::vector<CohortEntry> read_cohort_index(const std::string& dir) {
  const std::string index_path = (fs::path(dir) / kCohortIndexName).string();
  auto rows = read_csv(index_path);
  if (rows.empty())
    throw std::runtime_error("cohort index is empty: " + index_path);
  {
    // Rejoin to tolerate nothing: the header must match the schema exactly.
    std::string header;
    for (size_t i = 0; i < rows[0].size(); ++i) {
      if (i) header += ',';
      header += rows[0][i];
    }
    if (header != kIndexHeader)
      throw std::runtime_error("cohort index header mismatch, expected '" +
                               std::string(kIndexHeader) + "', got '" +
                               header + "'");
  }

  std::vector<CohortEntry> entries;
  entries.reserve(rows.size() - 1);
  for (size_t r = 1; r < rows.size(); ++r) {
    const auto& f = rows[r];
    if (f.size() != 9)
      throw std::runtime_error("cohort index row " + std::to_string(r) +
                               " has " + std::to_string(f.size()) +
                               " fields, expected 9");
    CohortEntry e;
    e.id = f[0];
    if (e.id.empty())
      throw std::runtime_error("cohort index row " + std::to_string(r) +
                               " has empty id");
    if (!f[1].empty()) {
      if (f[1] == "0")
        e.label = LesionClass::progression;
      else if (f[1] == "1")
        e.label = LesionClass::necrosis;
      else
        throw std::runtime_error("cohort index: label must be '', '0' or '1'"
                                 ", got '" + f[1] + "'");
    }
    e.clinical.age = parse_num(f[2], "age");
    e.clinical.sex = f[3];
    e.clinical.primary = f[4];
    e.clinical.systemic = f[5];
    e.clinical.recurrence_days = parse_num(f[6], "recurrence_days");
    e.image_path = (fs::path(dir) / f[7]).string();
    e.mask_path = (fs::path(dir) / f[8]).string();
    entries.push_back(std::move(e));
  }
  return entries;
}

LesionSample load_sample(const CohortEntry& entry) {
  if (!fs::exists(entry.image_path))
    throw std::runtime_error("cohort: missing image file " + entry.image_path +
                             " for sample " + entry.id);
  if (!fs::exists(entry.mask_path))
    throw std::runtime_error("cohort: missing mask file " + entry.mask_path +
                             " for sample " + entry.id);

  LesionSample s;
  s.id = entry.id;
  s.label = entry.label;
  s.clinical = entry.clinical;
  s.image = read_nifti(entry.image_path);
  s.mask = read_nifti(entry.mask_path);
  if (s.image.dims != s.mask.dims)
    throw std::runtime_error(
        "cohort: image/mask dimension mismatch for sample " + entry.id);
  for (double& v : s.mask.voxels) v = (v > 0.0) ? 1.0 : 0.0;
  return s;
}

std::vector<LesionSample> read_raw_cohort(const std::string& dir) {
  auto entries = read_cohort_index(dir);
  std::vector<LesionSample> samples;
  samples.reserve(entries.size());
  for (const auto& e : entries) samples.push_back(load_sample(e));
  return samples;
}

void write_raw_cohort(const std::string& dir,
                      const std::vector<LesionSample>& samples) {
  fs::create_directories(dir);
  std::ofstream out(fs::path(dir) / kCohortIndexName);
  if (!out)
    throw std::runtime_error("cannot open cohort index for writing in " + dir);
  out << kIndexHeader << "\n";
  for (const auto& s : samples) {
    if (!filename_safe(s.id))
      throw std::runtime_error("cohort sample id is not filename-safe: '" +
                               s.id + "'");
    const std::string img_rel = s.id + "_img.nii";
    const std::string msk_rel = s.id + "_mask.nii";
    write_nifti(s.image, kNiftiFloat64, (fs::path(dir) / img_rel).string());
    Volume3D mask = s.mask;
    for (double& v : mask.voxels) v = (v > 0.0) ? 1.0 : 0.0;
    write_nifti(mask, kNiftiUint8, (fs::path(dir) / msk_rel).string());
    out << s.id << ',';
    if (s.label) out << static_cast<int>(*s.label);
    out << ',' << format_g17(s.clinical.age) << ',' << s.clinical.sex << ','
        << s.clinical.primary << ',' << s.clinical.systemic << ','
        << format_g17(s.clinical.recurrence_days) << ',' << img_rel << ','
        << msk_rel << "\n";
  }
}

}  // namespace rndiff
