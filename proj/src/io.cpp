#include "costformer/io.hpp"

#include <png.h>

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <json.hpp>
#include <memory>
#include <sstream>
#include <stdexcept>

namespace costformer {

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return in;
}

template <typename U>
void put_le(std::ostream& out, U value) {
  unsigned char bytes[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<unsigned char>(value >> (8 * i));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(U));
}

template <typename U>
U get_le(std::istream& in) {
  unsigned char bytes[sizeof(U)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(U))) throw std::runtime_error("checkpoint: truncated file");
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(bytes[i]) << (8 * i);
  return value;
}

void put_f32(std::ostream& out, float v) { put_le(out, std::bit_cast<std::uint32_t>(v)); }
float get_f32(std::istream& in) { return std::bit_cast<float>(get_le<std::uint32_t>(in)); }

}  // namespace

Checkpoint snapshot(const ParamStore<float>& store, std::string config) {
  Checkpoint ck;
  for (const auto& [name, var] : store.entries()) ck.entries.emplace_back(name, var.value());
  ck.config = std::move(config);
  return ck;
}

void restore(ParamStore<float>& store, const Checkpoint& checkpoint) {
  if (checkpoint.entries.size() != store.entries().size()) {
    throw std::invalid_argument("restore: checkpoint has " + std::to_string(checkpoint.entries.size()) +
                                " tensors, model has " + std::to_string(store.entries().size()));
  }
  for (const auto& [name, value] : checkpoint.entries) {
    Var<float>& var = store.get(name);
    if (var.shape() != value.shape()) {
      throw std::invalid_argument("restore: shape mismatch for '" + name + "': " + shape_string(value.shape()) +
                                  " vs " + shape_string(var.shape()));
    }
    var.mutable_value() = value;
  }
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  std::ofstream out = open_out(path);
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint64_t>(out, checkpoint.entries.size());
  for (const auto& [name, value] : checkpoint.entries) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(value.rank()));
    for (std::size_t e : value.shape()) put_le<std::uint64_t>(out, e);
    for (float v : value.data()) put_f32(out, v);
  }
  put_le<std::uint64_t>(out, checkpoint.config.size());
  out.write(checkpoint.config.data(), static_cast<std::streamsize>(checkpoint.config.size()));
  if (!out) throw std::runtime_error("checkpoint: write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in = open_in(path);
  char magic[sizeof(kCheckpointMagic)];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw std::runtime_error("checkpoint: bad magic in " + path.string());
  }
  const auto version = get_le<std::uint32_t>(in);
  if (version != kCheckpointVersion) throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  const auto count = get_le<std::uint64_t>(in);
  Checkpoint ck;
  for (std::uint64_t n = 0; n < count; ++n) {
    const auto len = get_le<std::uint32_t>(in);
    std::string name(len, '\0');
    if (!in.read(name.data(), len)) throw std::runtime_error("checkpoint: truncated name");
    const auto rank = get_le<std::uint32_t>(in);
    if (rank == 0 || rank > 8) throw std::runtime_error("checkpoint: bad rank for '" + name + "'");
    Shape shape(rank);
    for (auto& e : shape) e = static_cast<std::size_t>(get_le<std::uint64_t>(in));
    Tensor<float> value(shape);
    for (float& v : value.data()) v = get_f32(in);
    ck.entries.emplace_back(std::move(name), std::move(value));
  }
  const auto config_len = get_le<std::uint64_t>(in);
  ck.config.assign(config_len, '\0');
  if (config_len > 0 && !in.read(ck.config.data(), static_cast<std::streamsize>(config_len))) {
    throw std::runtime_error("checkpoint: truncated config");
  }
  return ck;
}

void write_pfm(const std::filesystem::path& path, const Tensor<float>& image) {
  if (image.rank() != 2 && !(image.rank() == 3 && image.dim(2) == 3)) {
    throw std::invalid_argument("write_pfm: expected [H x W] or [H x W x 3]");
  }
  const std::size_t H = image.dim(0), W = image.dim(1), C = image.rank() == 3 ? 3 : 1;
  std::ofstream out = open_out(path);
  out << (C == 3 ? "PF" : "Pf") << '\n' << W << ' ' << H << '\n' << "-1.0\n";
  for (std::size_t y = H; y-- > 0;) {
    for (std::size_t i = 0; i < W * C; ++i) put_f32(out, image[y * W * C + i]);
  }
  if (!out) throw std::runtime_error("write_pfm: write failed for " + path.string());
}

Tensor<float> read_pfm(const std::filesystem::path& path) {
  std::ifstream in = open_in(path);
  std::string kind;
  std::size_t W = 0, H = 0;
  double scale = 0.0;
  in >> kind >> W >> H >> scale;
  in.get();
  if (!in || (kind != "Pf" && kind != "PF") || W == 0 || H == 0) throw std::runtime_error("read_pfm: bad header");
  if (scale >= 0.0) throw std::runtime_error("read_pfm: big-endian files are not supported");
  const std::size_t C = kind == "PF" ? 3 : 1;
  Tensor<float> image = C == 3 ? Tensor<float>({H, W, 3}) : Tensor<float>({H, W});
  for (std::size_t y = H; y-- > 0;) {
    for (std::size_t i = 0; i < W * C; ++i) image[y * W * C + i] = get_f32(in);
  }
  return image;
}

void write_png16(const std::filesystem::path& path, const Tensor<float>& map, double lo, double hi) {
  if (map.rank() != 2) throw std::invalid_argument("write_png16: expected [H x W]");
  if (!(hi > lo)) throw std::invalid_argument("write_png16: empty range");
  const std::size_t H = map.dim(0), W = map.dim(1);
  std::unique_ptr<FILE, int (*)(FILE*)> file(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!file) throw std::runtime_error("cannot open " + path.string() + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw std::runtime_error("write_png16: libpng init failed");
  }
  std::vector<png_byte> row(2 * W);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("write_png16: libpng error");
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(W), static_cast<png_uint_32>(H), 16, PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      const double t = std::clamp((static_cast<double>(map.at(y, x)) - lo) / (hi - lo), 0.0, 1.0);
      const auto q = static_cast<std::uint16_t>(std::lround(t * 65535.0));
      row[2 * x] = static_cast<png_byte>(q >> 8);
      row[2 * x + 1] = static_cast<png_byte>(q & 0xff);
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

void write_camera(const std::filesystem::path& path, const Camera& camera) {
  std::ofstream out = open_out(path);
  out << std::setprecision(17) << "K\n";
  for (int r = 0; r < 3; ++r) out << camera.K()(r, 0) << ' ' << camera.K()(r, 1) << ' ' << camera.K()(r, 2) << '\n';
  out << "Rt\n";
  for (int r = 0; r < 3; ++r) {
    out << camera.R()(r, 0) << ' ' << camera.R()(r, 1) << ' ' << camera.R()(r, 2) << ' ' << camera.t()(r) << '\n';
  }
}

Camera read_camera(const std::filesystem::path& path) {
  std::ifstream in = open_in(path);
  std::string tag;
  Eigen::Matrix3d K, R;
  Eigen::Vector3d t;
  in >> tag;
  if (tag != "K") throw std::runtime_error("read_camera: expected 'K' in " + path.string());
  for (int r = 0; r < 3; ++r) in >> K(r, 0) >> K(r, 1) >> K(r, 2);
  in >> tag;
  if (tag != "Rt") throw std::runtime_error("read_camera: expected 'Rt' in " + path.string());
  for (int r = 0; r < 3; ++r) in >> R(r, 0) >> R(r, 1) >> R(r, 2) >> t(r);
  if (!in) throw std::runtime_error("read_camera: malformed " + path.string());
  return Camera(K, R, t);
}

void save_scene(const std::filesystem::path& dir, const SyntheticScene& scene) {
  std::filesystem::create_directories(dir);
  write_pfm(dir / "image0.pfm", scene.reference.image);
  write_camera(dir / "cam0.txt", scene.reference.camera);
  for (std::size_t k = 0; k < scene.sources.size(); ++k) {
    write_pfm(dir / ("image" + std::to_string(k + 1) + ".pfm"), scene.sources[k].image);
    write_camera(dir / ("cam" + std::to_string(k + 1) + ".txt"), scene.sources[k].camera);
  }
  write_pfm(dir / "depth.pfm", scene.depth);
  write_png16(dir / "depth_preview.png", scene.depth, scene.d_min, scene.d_max);
  nlohmann::json meta = {{"d_min", scene.d_min},
                         {"d_max", scene.d_max},
                         {"sources", scene.sources.size()},
                         {"height", scene.height()},
                         {"width", scene.width()}};
  std::ofstream(dir / "scene.json") << meta.dump(2) << '\n';
}

SyntheticScene load_scene(const std::filesystem::path& dir) {
  std::ifstream meta_in = open_in(dir / "scene.json");
  const nlohmann::json meta = nlohmann::json::parse(meta_in);
  SyntheticScene scene;
  scene.d_min = meta.at("d_min").get<double>();
  scene.d_max = meta.at("d_max").get<double>();
  scene.reference = {read_camera(dir / "cam0.txt"), read_pfm(dir / "image0.pfm")};
  const auto sources = meta.at("sources").get<std::size_t>();
  for (std::size_t k = 1; k <= sources; ++k) {
    scene.sources.push_back(
        {read_camera(dir / ("cam" + std::to_string(k) + ".txt")), read_pfm(dir / ("image" + std::to_string(k) + ".pfm"))});
  }
  scene.depth = read_pfm(dir / "depth.pfm");
  return scene;
}

}  // namespace costformer
