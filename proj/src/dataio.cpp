#include "bm4dpc/dataio.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

namespace bm4dpc {

static_assert(std::endian::native == std::endian::little, "NIfTI I/O assumes a little-endian host");

namespace {

// Byte offsets of the NIfTI-1 header fields we touch.
constexpr std::size_t kOffSizeofHdr = 0;
constexpr std::size_t kOffDim = 40;
constexpr std::size_t kOffDatatype = 70;
constexpr std::size_t kOffBitpix = 72;
constexpr std::size_t kOffPixdim = 76;
constexpr std::size_t kOffVoxOffset = 108;
constexpr std::size_t kOffSclSlope = 112;
constexpr std::size_t kOffSclInter = 116;
constexpr std::size_t kOffXyztUnits = 123;
constexpr std::size_t kOffDescrip = 148;
constexpr std::size_t kOffQformCode = 252;
constexpr std::size_t kOffSformCode = 254;
constexpr std::size_t kOffSrowX = 280;
constexpr std::size_t kOffMagic = 344;

template <typename T>
T get(const std::vector<char>& buf, std::size_t off) {
  T v;
  std::memcpy(&v, buf.data() + off, sizeof(T));
  return v;
}

template <typename T>
void put(std::vector<char>& buf, std::size_t off, T v) {
  std::memcpy(buf.data() + off, &v, sizeof(T));
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::vector<double>> parse_rows(const std::string& text) {
  std::vector<std::vector<double>> rows;
  std::istringstream lines(text);
  std::string line;
  while (std::getline(lines, line)) {
    std::istringstream tokens(line);
    std::vector<double> row;
    std::string tok;
    while (tokens >> tok) {
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(tok, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != tok.size()) throw IoError("non-numeric token '" + tok + "'");
      row.push_back(v);
    }
    if (!row.empty()) rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace

NiftiImage read_nifti(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<char> hdr(kNiftiHeaderSize);
  if (!in.read(hdr.data(), kNiftiHeaderSize))
    throw NiftiFormatError(NiftiFormatError::Kind::Truncated, path.string() + ": truncated header");

  if (get<std::int32_t>(hdr, kOffSizeofHdr) != kNiftiHeaderSize)
    throw NiftiFormatError(NiftiFormatError::Kind::BadHeaderSize,
                           path.string() + ": sizeof_hdr is not 348 (big-endian or not NIfTI-1)");
  if (std::memcmp(hdr.data() + kOffMagic, "n+1\0", 4) != 0)
    throw NiftiFormatError(NiftiFormatError::Kind::BadMagic, path.string() + ": magic 'n+1' absent");

  const auto ndim = get<std::int16_t>(hdr, kOffDim);
  if (ndim < 3 || ndim > 4)
    throw NiftiFormatError(NiftiFormatError::Kind::UnsupportedDims,
                           path.string() + ": only 3D and 4D images are supported, got dim[0]=" + std::to_string(ndim));
  std::array<Index, 4> d{};
  for (int i = 0; i < 4; ++i) {
    d[static_cast<std::size_t>(i)] = i < ndim ? get<std::int16_t>(hdr, kOffDim + 2 * (i + 1)) : 1;
    if (d[static_cast<std::size_t>(i)] < 1)
      throw NiftiFormatError(NiftiFormatError::Kind::UnsupportedDims, path.string() + ": nonpositive dimension");
  }

  const auto datatype = get<std::int16_t>(hdr, kOffDatatype);
  if (datatype != kDatatypeFloat32 && datatype != kDatatypeComplex64)
    throw NiftiFormatError(NiftiFormatError::Kind::UnsupportedDatatype,
                           path.string() + ": unsupported datatype " + std::to_string(datatype) +
                               " (need float32 or complex64)");

  NiftiImage img;
  img.dims = Dims3{d[0], d[1], d[2]};
  img.frames = d[3];
  img.four_d = ndim == 4;
  for (int i = 0; i < 3; ++i) {
    const float p = get<float>(hdr, kOffPixdim + 4 * (i + 1));
    img.voxel_size[static_cast<std::size_t>(i)] = p > 0.0f ? p : 1.0;
  }

  const float vox_offset = get<float>(hdr, kOffVoxOffset);
  double slope = get<float>(hdr, kOffSclSlope);
  double inter = get<float>(hdr, kOffSclInter);
  if (slope == 0.0 || !std::isfinite(slope)) {
    slope = 1.0;
    inter = 0.0;
  }
  if (!std::isfinite(inter)) inter = 0.0;

  const std::size_t count = static_cast<std::size_t>(img.dims.size() * img.frames);
  const std::size_t bytes_per = datatype == kDatatypeFloat32 ? 4 : 8;
  std::vector<char> payload(count * bytes_per);
  in.seekg(static_cast<std::streamoff>(vox_offset));
  if (!in || !in.read(payload.data(), static_cast<std::streamsize>(payload.size())))
    throw NiftiFormatError(NiftiFormatError::Kind::Truncated, path.string() + ": truncated payload");

  if (datatype == kDatatypeFloat32) {
    std::vector<double> v(count);
    for (std::size_t i = 0; i < count; ++i) v[i] = get<float>(payload, 4 * i) * slope + inter;
    img.data = std::move(v);
  } else {
    std::vector<Complex> v(count);
    for (std::size_t i = 0; i < count; ++i)
      v[i] = Complex(get<float>(payload, 8 * i) * slope + inter, get<float>(payload, 8 * i + 4) * slope);
    img.data = std::move(v);
  }
  return img;
}

void write_nifti(const NiftiImage& image, const std::filesystem::path& path) {
  if (!image.dims.valid() || image.frames < 1) throw std::invalid_argument("write_nifti: invalid dims");
  for (int a = 0; a < 3; ++a)
    if (image.dims[a] > 32767) throw std::invalid_argument("write_nifti: dimension exceeds NIfTI-1 limit");
  const bool cplx = image.is_complex();
  const std::size_t count = static_cast<std::size_t>(image.dims.size() * image.frames);

  std::vector<char> hdr(kNiftiVoxOffset, 0);
  put<std::int32_t>(hdr, kOffSizeofHdr, kNiftiHeaderSize);
  const std::int16_t ndim = image.four_d ? 4 : 3;
  put<std::int16_t>(hdr, kOffDim, ndim);
  put<std::int16_t>(hdr, kOffDim + 2, static_cast<std::int16_t>(image.dims.x));
  put<std::int16_t>(hdr, kOffDim + 4, static_cast<std::int16_t>(image.dims.y));
  put<std::int16_t>(hdr, kOffDim + 6, static_cast<std::int16_t>(image.dims.z));
  for (int i = 4; i <= 7; ++i) put<std::int16_t>(hdr, kOffDim + 2 * i, 1);
  if (image.four_d) put<std::int16_t>(hdr, kOffDim + 8, static_cast<std::int16_t>(image.frames));
  put<std::int16_t>(hdr, kOffDatatype, cplx ? kDatatypeComplex64 : kDatatypeFloat32);
  put<std::int16_t>(hdr, kOffBitpix, cplx ? 64 : 32);
  put<float>(hdr, kOffPixdim, 1.0f);
  for (int i = 0; i < 3; ++i)
    put<float>(hdr, kOffPixdim + 4 * (i + 1), static_cast<float>(image.voxel_size[static_cast<std::size_t>(i)]));
  for (int i = 4; i <= 7; ++i) put<float>(hdr, kOffPixdim + 4 * i, 1.0f);
  put<float>(hdr, kOffVoxOffset, static_cast<float>(kNiftiVoxOffset));
  put<float>(hdr, kOffSclSlope, 1.0f);
  put<float>(hdr, kOffSclInter, 0.0f);
  hdr[kOffXyztUnits] = 2;  // mm
  const char descrip[] = "bm4dpc";
  std::memcpy(hdr.data() + kOffDescrip, descrip, sizeof(descrip) - 1);
  put<std::int16_t>(hdr, kOffQformCode, 0);
  put<std::int16_t>(hdr, kOffSformCode, 1);
  for (int r = 0; r < 3; ++r)
    put<float>(hdr, kOffSrowX + 16 * r + 4 * r, static_cast<float>(image.voxel_size[static_cast<std::size_t>(r)]));
  std::memcpy(hdr.data() + kOffMagic, "n+1\0", 4);

  std::vector<char> payload(count * (cplx ? 8 : 4));
  if (cplx) {
    const auto& v = std::get<std::vector<Complex>>(image.data);
    if (v.size() != count) throw std::invalid_argument("write_nifti: sample count mismatch");
    for (std::size_t i = 0; i < count; ++i) {
      put<float>(payload, 8 * i, static_cast<float>(v[i].real()));
      put<float>(payload, 8 * i + 4, static_cast<float>(v[i].imag()));
    }
  } else {
    const auto& v = std::get<std::vector<double>>(image.data);
    if (v.size() != count) throw std::invalid_argument("write_nifti: sample count mismatch");
    for (std::size_t i = 0; i < count; ++i) put<float>(payload, 4 * i, static_cast<float>(v[i]));
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(hdr.data(), static_cast<std::streamsize>(hdr.size()));
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

namespace {

template <typename Scalar>
std::vector<Volume<Scalar>> split_frames(const NiftiImage& img, const std::vector<Scalar>& v) {
  std::vector<Volume<Scalar>> vols;
  const Index w = img.dims.size();
  for (Index f = 0; f < img.frames; ++f) {
    typename Volume<Scalar>::Storage s(w);
    for (Index i = 0; i < w; ++i) s[i] = v[static_cast<std::size_t>(f * w + i)];
    vols.emplace_back(img.dims, std::move(s));
  }
  return vols;
}

template <typename Scalar>
NiftiImage image_from(const std::vector<Volume<Scalar>>& vols, bool four_d) {
  NiftiImage img;
  img.dims = vols.front().dims();
  img.frames = static_cast<Index>(vols.size());
  img.four_d = four_d;
  std::vector<Scalar> data;
  data.reserve(static_cast<std::size_t>(img.dims.size() * img.frames));
  for (const auto& v : vols) {
    if (v.dims() != img.dims) throw std::invalid_argument("write_nifti: volumes differ in dims");
    data.insert(data.end(), v.samples().data(), v.samples().data() + v.size());
  }
  img.data = std::move(data);
  return img;
}

}  // namespace

RealVolume read_real_volume(const std::filesystem::path& path) {
  const NiftiImage img = read_nifti(path);
  if (img.is_complex()) throw IoError(path.string() + ": expected a real-valued image");
  if (img.frames != 1) throw IoError(path.string() + ": expected a single 3D volume");
  return split_frames(img, std::get<std::vector<double>>(img.data)).front();
}

std::variant<RealDataset, ComplexDataset> read_dataset(const std::filesystem::path& path) {
  const NiftiImage img = read_nifti(path);
  if (img.is_complex()) {
    ComplexDataset d;
    d.volumes = split_frames(img, std::get<std::vector<Complex>>(img.data));
    return d;
  }
  RealDataset d;
  d.volumes = split_frames(img, std::get<std::vector<double>>(img.data));
  return d;
}

RealDataset read_real_dataset(const std::filesystem::path& path) {
  auto any = read_dataset(path);
  if (auto* r = std::get_if<RealDataset>(&any)) return std::move(*r);
  throw IoError(path.string() + ": expected a real-valued dataset");
}

void write_nifti(const RealVolume& volume, const std::filesystem::path& path) {
  write_nifti(image_from(std::vector<RealVolume>{volume}, false), path);
}

void write_nifti(const RealDataset& dataset, const std::filesystem::path& path) {
  if (dataset.volumes.empty()) throw std::invalid_argument("write_nifti: empty dataset");
  write_nifti(image_from(dataset.volumes, true), path);
}

void write_nifti(const ComplexDataset& dataset, const std::filesystem::path& path) {
  if (dataset.volumes.empty()) throw std::invalid_argument("write_nifti: empty dataset");
  write_nifti(image_from(dataset.volumes, true), path);
}

NoiseMap read_noise_map(const std::filesystem::path& path) { return NoiseMap(read_real_volume(path)); }

NoisePsd read_psd(const std::filesystem::path& path) {
  NoisePsd psd(read_real_volume(path), false);
  psd.normalize();
  return psd;
}

std::vector<double> parse_bvals(const std::string& text) {
  std::vector<double> out;
  for (const auto& row : parse_rows(text)) out.insert(out.end(), row.begin(), row.end());
  return out;
}

std::vector<Eigen::Vector3d> parse_bvecs(const std::string& text) {
  const auto rows = parse_rows(text);
  if (rows.size() != 3) throw IoError("bvec file must have 3 rows, found " + std::to_string(rows.size()));
  if (rows[0].size() != rows[1].size() || rows[0].size() != rows[2].size())
    throw IoError("bvec rows differ in length");
  std::vector<Eigen::Vector3d> out;
  for (std::size_t i = 0; i < rows[0].size(); ++i) {
    Eigen::Vector3d g(rows[0][i], rows[1][i], rows[2][i]);
    const double n = g.norm();
    out.push_back(n > 1e-8 ? Eigen::Vector3d(g / n) : Eigen::Vector3d::Zero());
  }
  return out;
}

std::pair<std::vector<double>, std::optional<std::vector<Eigen::Vector3d>>> read_bvals_bvecs(
    const std::filesystem::path& bval_path, const std::optional<std::filesystem::path>& bvec_path) {
  auto bvals = parse_bvals(read_text(bval_path));
  std::optional<std::vector<Eigen::Vector3d>> bvecs;
  if (bvec_path) {
    bvecs = parse_bvecs(read_text(*bvec_path));
    if (bvecs->size() != bvals.size())
      throw IoError("bvec count " + std::to_string(bvecs->size()) + " does not match bval count " +
                    std::to_string(bvals.size()));
  }
  return {std::move(bvals), std::move(bvecs)};
}

void write_bvals(const std::vector<double>& bvals, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  for (std::size_t i = 0; i < bvals.size(); ++i) out << (i ? " " : "") << bvals[i];
  out << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

void write_bvecs(const std::vector<Eigen::Vector3d>& bvecs, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.precision(17);
  for (int r = 0; r < 3; ++r) {
    for (std::size_t i = 0; i < bvecs.size(); ++i) out << (i ? " " : "") << bvecs[i][r];
    out << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

std::size_t ShellTable::shell_of(Index v) const {
  for (std::size_t s = 0; s < shells.size(); ++s)
    if (std::find(shells[s].members.begin(), shells[s].members.end(), v) != shells[s].members.end()) return s;
  throw std::out_of_range("volume " + std::to_string(v) + " belongs to no shell");
}

ShellTable group_shells(const std::vector<double>& bvals, double tolerance) {
  if (!(tolerance >= 0.0)) throw std::invalid_argument("shell tolerance must be nonnegative");
  std::vector<Index> order(bvals.size());
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Index a, Index b) { return bvals[static_cast<std::size_t>(a)] < bvals[static_cast<std::size_t>(b)]; });

  ShellTable table;
  table.tolerance = tolerance;
  double sum = 0.0;
  for (Index i : order) {
    const double b = bvals[static_cast<std::size_t>(i)];
    if (table.shells.empty() || b > table.shells.back().center + tolerance) {
      table.shells.push_back(Shell{b, {i}});
      sum = b;
    } else {
      auto& s = table.shells.back();
      s.members.push_back(i);
      sum += b;
      s.center = sum / static_cast<double>(s.members.size());
    }
  }
  for (auto& s : table.shells) std::sort(s.members.begin(), s.members.end());
  return table;
}

}  // namespace bm4dpc
