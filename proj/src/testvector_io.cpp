#include <json.hpp>

#include <cctype>

#include "f32io.hpp"
#include "xbt/error.hpp"
#include "xbt/oneshot.hpp"

namespace xbt {
namespace {

using json = nlohmann::json;
constexpr int kFormatVersion = 1;

json config_to_json(const GenConfig& c) {
  return {{"loss", to_string(c.loss)},
          {"ground_truth", to_string(c.ground_truth)},
          {"alpha0", c.alpha0},
          {"iterations", c.iterations},
          {"decay_every", c.decay_every},
          {"init", c.init == InitMode::gaussian ? "gaussian" : "file"},
          {"init_file", c.init_file},
          {"target_dkl", c.target_dkl}};
}

GenConfig config_from_json(const json& j, std::uint64_t seed) {
  GenConfig c;
  c.loss = loss_kind_from_string(j.at("loss").get<std::string>());
  c.ground_truth = ground_truth_mode_from_string(j.at("ground_truth").get<std::string>());
  c.alpha0 = j.at("alpha0").get<double>();
  c.iterations = j.at("iterations").get<std::size_t>();
  c.decay_every = j.at("decay_every").get<std::size_t>();
  c.init = j.at("init").get<std::string>() == "file" ? InitMode::file : InitMode::gaussian;
  c.init_file = j.value("init_file", std::string{});
  c.target_dkl = j.value("target_dkl", 1e-7);
  c.seed = seed;
  return c;
}

// Reads the next whitespace-delimited header token of a PPM, skipping comments.
std::string ppm_token(const std::vector<unsigned char>& bytes, std::size_t& pos) {
  while (pos < bytes.size()) {
    if (bytes[pos] == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
    } else if (std::isspace(bytes[pos])) {
      ++pos;
    } else {
      break;
    }
  }
  std::string tok;
  while (pos < bytes.size() && !std::isspace(bytes[pos])) tok.push_back(static_cast<char>(bytes[pos++]));
  return tok;
}

}  // namespace

std::filesystem::path test_vector_payload_path(const std::filesystem::path& manifest) {
  auto p = manifest;
  p.replace_extension(".bin");
  return p;
}

void save_test_vector(const TestVector& tv, const std::filesystem::path& manifest,
                      bool overwrite) {
  const auto payload_path = test_vector_payload_path(manifest);
  if (payload_path == manifest) throw ValueError("test-vector manifest must not use a .bin extension");
  json j;
  j["format_version"] = kFormatVersion;
  j["shape"] = tv.input.shape();
  j["seed"] = tv.config.seed;
  j["provenance"] = tv.provenance;
  j["config"] = config_to_json(tv.config);
  j["baseline"] = {{"mu0", tv.baseline.mu0}, {"sigma0", tv.baseline.sigma0}, {"dkl0", tv.baseline.dkl0}};
  j["converged"] = tv.converged;
  j["payload"] = payload_path.filename().string();

  std::vector<unsigned char> bytes;
  bytes.reserve(tv.input.size() * 4);
  for (double v : tv.input.data()) detail::append_f32(bytes, v);

  if (!overwrite)
    for (const auto& p : {manifest, payload_path})
      if (std::filesystem::exists(p))
        throw FormatError(p.string() + " already exists (pass overwrite to replace it)");
  detail::write_text(manifest, j.dump(2) + "\n", overwrite);
  detail::write_file(payload_path, bytes, overwrite);
}

TestVector load_test_vector(const std::filesystem::path& manifest) {
  TestVector tv;
  Shape shape;
  std::filesystem::path payload_path;
  try {
    const json j = json::parse(detail::read_text(manifest));
    if (j.at("format_version").get<int>() != kFormatVersion)
      throw FormatError("unsupported test-vector format_version");
    shape = j.at("shape").get<Shape>();
    const auto seed = j.at("seed").get<std::uint64_t>();
    tv.config = config_from_json(j.at("config"), seed);
    tv.provenance = j.value("provenance", std::string{});
    const auto& b = j.at("baseline");
    tv.baseline = {b.at("mu0").get<double>(), b.at("sigma0").get<double>(),
                   b.at("dkl0").get<double>()};
    tv.converged = j.value("converged", true);
    payload_path = manifest.parent_path() / j.value("payload", test_vector_payload_path(manifest).filename().string());
  } catch (const json::exception& e) {
    throw FormatError("malformed test-vector manifest " + manifest.string() + ": " + e.what());
  }

  const auto bytes = detail::read_file(payload_path);
  const std::size_t n = shape_numel(shape);
  if (bytes.size() != 4 * n)
    throw FormatError("test-vector payload " + payload_path.string() + " has " +
                      std::to_string(bytes.size()) + " bytes, expected " + std::to_string(4 * n));
  std::vector<double> values(n);
  for (std::size_t i = 0; i < n; ++i) values[i] = detail::read_f32(bytes.data() + 4 * i);
  tv.input = Tensor(shape, std::move(values));
  if (!tv.input.all_finite()) throw FormatError("test-vector payload holds non-finite values");

  const double recomputed = kl_divergence(tv.baseline.mu0, tv.baseline.sigma0);
  if (std::abs(recomputed - tv.baseline.dkl0) > 1e-12 * std::max(1.0, std::abs(recomputed)))
    throw FormatError("test-vector baseline dkl0 is inconsistent with mu0 and sigma0");
  return tv;
}

Tensor load_init_file(const std::filesystem::path& path, const Shape& shape) {
  const auto bytes = detail::read_file(path);
  const std::size_t n = shape_numel(shape);
  if (path.extension() == ".ppm") {
    if (shape.size() != 3 || shape[0] != 3)
      throw ShapeError("PPM initialization needs a [3,H,W] model input");
    std::size_t pos = 0;
    if (ppm_token(bytes, pos) != "P6") throw FormatError(path.string() + " is not a binary PPM");
    std::size_t width = 0, height = 0, maxval = 0;
    try {
      width = std::stoul(ppm_token(bytes, pos));
      height = std::stoul(ppm_token(bytes, pos));
      maxval = std::stoul(ppm_token(bytes, pos));
    } catch (const std::exception&) {
      throw FormatError(path.string() + " has a malformed PPM header");
    }
    ++pos;  // single whitespace before the raster
    if (maxval == 0 || maxval > 255) throw FormatError("only 8-bit PPM images are supported");
    if (width != shape[2] || height != shape[1])
      throw ShapeError("PPM is " + std::to_string(width) + "x" + std::to_string(height) +
                       ", model input is " + shape_str(shape));
    if (bytes.size() < pos + 3 * width * height) throw FormatError(path.string() + " is truncated");
    Tensor x(shape);
    for (std::size_t yy = 0; yy < height; ++yy)
      for (std::size_t xx = 0; xx < width; ++xx)
        for (std::size_t c = 0; c < 3; ++c)
          x[(c * height + yy) * width + xx] =
              static_cast<double>(bytes[pos + (yy * width + xx) * 3 + c]) / static_cast<double>(maxval);
    return x;
  }
  if (bytes.size() != 4 * n)
    throw FormatError(path.string() + " has " + std::to_string(bytes.size()) + " bytes, expected " +
                      std::to_string(4 * n) + " float32 values");
  std::vector<double> values(n);
  for (std::size_t i = 0; i < n; ++i) values[i] = detail::read_f32(bytes.data() + 4 * i);
  Tensor x(shape, std::move(values));
  if (!x.all_finite()) throw FormatError(path.string() + " holds non-finite values");
  return x;
}

}  // namespace xbt
