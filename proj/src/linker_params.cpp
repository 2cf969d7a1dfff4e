#include <bit>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <random>

#include "mmtrack/linker.hpp"

namespace mmtrack::linker {

namespace {

constexpr char kMagic[4] = {'L', 'N', 'K', '1'};
constexpr std::uint32_t kFormatVersion = 1;

template <typename P, typename R>
void append_block(std::vector<R>& out, const std::string& prefix, P& block, int kernel,
                  int in_channels) {
  const auto out_channels = static_cast<std::uint32_t>(block.weight.rows());
  out.push_back({prefix + ".weight",
                 {out_channels, static_cast<std::uint32_t>(kernel),
                  static_cast<std::uint32_t>(in_channels)},
                 block.weight.data(), static_cast<std::size_t>(block.weight.size()), true});
  auto vec = [&](const char* name, auto& v, bool learnable) {
    out.push_back({prefix + name, {static_cast<std::uint32_t>(v.size())}, v.data(),
                   static_cast<std::size_t>(v.size()), learnable});
  };
  vec(".bn.gamma", block.gamma, true);
  vec(".bn.beta", block.beta, true);
  vec(".bn.running_mean", block.running_mean, false);
  vec(".bn.running_var", block.running_var, false);
}

template <typename P, typename R>
std::vector<R> collect(P& p) {
  std::vector<R> out;
  const auto& a = p.arch;
  for (int l = 0; l < 3; ++l) {
    const int in = l == 0 ? 1 : a.channels[l - 1];
    append_block(out, "temporal." + std::to_string(l), p.temporal[l], a.temporal_kernel, in);
  }
  for (int l = 0; l < 3; ++l) {
    const int in = l == 0 ? 1 : a.channels[l - 1];
    append_block(out, "spatial." + std::to_string(l), p.spatial[l], a.spatial_kernel, in);
  }
  auto mat = [&](const char* name, auto& m) {
    out.push_back({name,
                   {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())},
                   m.data(), static_cast<std::size_t>(m.size()), true});
  };
  auto vec = [&](const char* name, auto& v) {
    out.push_back({name, {static_cast<std::uint32_t>(v.size())}, v.data(),
                   static_cast<std::size_t>(v.size()), true});
  };
  mat("mlp.fc1.weight", p.fc1_weight);
  vec("mlp.fc1.bias", p.fc1_bias);
  mat("mlp.fc2.weight", p.fc2_weight);
  vec("mlp.fc2.bias", p.fc2_bias);
  return out;
}

void validate_arch(const LinkerArch& a) {
  for (int c : a.channels) {
    if (c < 1) throw Error("linker: channel widths must be positive");
  }
  if (a.hidden < 1) throw Error("linker: hidden width must be positive");
  if (a.temporal_kernel < 1 || a.temporal_kernel % 2 == 0 || a.spatial_kernel < 1 ||
      a.spatial_kernel % 2 == 0) {
    throw Error("linker: kernel sizes must be odd");
  }
}

void write_u32(std::ostream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                     static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  out.write(b, 4);
}

std::uint64_t read_bytes(std::istream& in, std::size_t n) {
  unsigned char b[8] = {};
  in.read(reinterpret_cast<char*>(b), static_cast<std::streamsize>(n));
  if (!in || in.gcount() != static_cast<std::streamsize>(n)) {
    throw Error("linker weights: truncated stream");
  }
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

struct RawTensor {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> data;
};

}  // namespace

template <typename T>
std::vector<TensorRef<T>> tensors(BasicParams<T>& params) {
  return collect<BasicParams<T>, TensorRef<T>>(params);
}

template <typename T>
std::vector<TensorRef<const T>> tensors(const BasicParams<T>& params) {
  return collect<const BasicParams<T>, TensorRef<const T>>(params);
}

template <typename T>
BasicParams<T> zero_params(const LinkerArch& arch) {
  validate_arch(arch);
  BasicParams<T> p;
  p.arch = arch;
  auto init_block = [](ConvBlock<T>& b, int out, int kernel, int in) {
    b.weight = Mat<T>::Zero(out, kernel * in);
    b.gamma = Vec<T>::Zero(out);
    b.beta = Vec<T>::Zero(out);
    b.running_mean = Vec<T>::Zero(out);
    b.running_var = Vec<T>::Zero(out);
  };
  for (int l = 0; l < 3; ++l) {
    const int in = l == 0 ? 1 : arch.channels[l - 1];
    init_block(p.temporal[l], arch.channels[l], arch.temporal_kernel, in);
    init_block(p.spatial[l], arch.channels[l], arch.spatial_kernel, in);
  }
  const int e = 2 * arch.embedding_size();
  p.fc1_weight = Mat<T>::Zero(arch.hidden, e);
  p.fc1_bias = Vec<T>::Zero(arch.hidden);
  p.fc2_weight = Mat<T>::Zero(2, arch.hidden);
  p.fc2_bias = Vec<T>::Zero(2);
  return p;
}

template <typename T>
BasicParams<T> init_params(const LinkerArch& arch, std::uint64_t seed) {
  auto p = zero_params<T>(arch);
  std::mt19937_64 rng(seed);
  auto xavier = [&](auto& m, double fan_in, double fan_out) {
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(u(rng));
  };
  auto init_block = [&](ConvBlock<T>& b, int kernel) {
    const double in = static_cast<double>(b.weight.cols());
    xavier(b.weight, in, static_cast<double>(b.weight.rows()) * kernel);
    b.gamma.setOnes();
    b.running_var.setOnes();
  };
  for (int l = 0; l < 3; ++l) {
    init_block(p.temporal[l], arch.temporal_kernel);
    init_block(p.spatial[l], arch.spatial_kernel);
  }
  xavier(p.fc1_weight, static_cast<double>(p.fc1_weight.cols()),
         static_cast<double>(p.fc1_weight.rows()));
  xavier(p.fc2_weight, static_cast<double>(p.fc2_weight.cols()),
         static_cast<double>(p.fc2_weight.rows()));
  return p;
}

template <typename To, typename From>
BasicParams<To> cast_params(const BasicParams<From>& params) {
  auto out = zero_params<To>(params.arch);
  auto dst = tensors(out);
  const auto src = tensors(params);
  for (std::size_t i = 0; i < dst.size(); ++i) {
    for (std::size_t k = 0; k < dst[i].size; ++k) dst[i].data[k] = static_cast<To>(src[i].data[k]);
  }
  return out;
}

std::size_t learnable_count(const LinkerArch& arch) {
  auto p = zero_params<float>(arch);
  std::size_t n = 0;
  for (const auto& t : tensors(p)) {
    if (t.learnable) n += t.size;
  }
  return n;
}

void save_params(const LinkerParams& params, std::ostream& out) {
  const auto list = tensors(params);
  out.write(kMagic, 4);
  write_u32(out, kFormatVersion);
  write_u32(out, static_cast<std::uint32_t>(list.size()));
  for (const auto& t : list) {
    const auto len = static_cast<std::uint16_t>(t.name.size());
    const char lb[2] = {static_cast<char>(len & 0xff), static_cast<char>(len >> 8)};
    out.write(lb, 2);
    out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    const char rank = static_cast<char>(t.dims.size());
    out.write(&rank, 1);
    for (auto d : t.dims) write_u32(out, d);
    for (std::size_t k = 0; k < t.size; ++k) write_u32(out, std::bit_cast<std::uint32_t>(t.data[k]));
  }
  if (!out) throw Error("linker weights: write failed");
}

LinkerParams load_params(std::istream& in) {
  char magic[4] = {};
  in.read(magic, 4);
  if (!in || std::string(magic, 4) != std::string(kMagic, 4)) {
    throw Error("linker weights: bad magic");
  }
  const auto version = static_cast<std::uint32_t>(read_bytes(in, 4));
  if (version != kFormatVersion) {
    throw Error("linker weights: unsupported version " + std::to_string(version));
  }
  const auto count = static_cast<std::uint32_t>(read_bytes(in, 4));
  if (count > 4096) throw Error("linker weights: implausible tensor count");

  std::vector<RawTensor> raw(count);
  for (auto& t : raw) {
    const auto len = static_cast<std::size_t>(read_bytes(in, 2));
    t.name.resize(len);
    in.read(t.name.data(), static_cast<std::streamsize>(len));
    if (!in) throw Error("linker weights: truncated stream");
    const auto rank = static_cast<std::size_t>(read_bytes(in, 1));
    std::uint64_t n = 1;
    for (std::size_t r = 0; r < rank; ++r) {
      t.dims.push_back(static_cast<std::uint32_t>(read_bytes(in, 4)));
      n *= t.dims.back();
    }
    if (n > (std::uint64_t{1} << 28)) throw Error("linker weights: tensor too large");
    t.data.resize(static_cast<std::size_t>(n));
    for (auto& v : t.data) v = std::bit_cast<float>(static_cast<std::uint32_t>(read_bytes(in, 4)));
  }

  // Recover the architecture from the tensor shapes, then verify every tensor.
  auto find = [&](const std::string& name) -> const RawTensor& {
    for (const auto& t : raw) {
      if (t.name == name) return t;
    }
    throw Error("linker weights: missing tensor " + name);
  };
  LinkerArch arch;
  for (int l = 0; l < 3; ++l) {
    const auto& w = find("temporal." + std::to_string(l) + ".weight");
    if (w.dims.size() != 3) throw Error("linker weights: shape mismatch in " + w.name);
    arch.channels[l] = static_cast<int>(w.dims[0]);
    if (l == 0) arch.temporal_kernel = static_cast<int>(w.dims[1]);
  }
  const auto& s0 = find("spatial.0.weight");
  if (s0.dims.size() != 3) throw Error("linker weights: shape mismatch in " + s0.name);
  arch.spatial_kernel = static_cast<int>(s0.dims[1]);
  const auto& fc1 = find("mlp.fc1.weight");
  if (fc1.dims.size() != 2) throw Error("linker weights: shape mismatch in " + fc1.name);
  arch.hidden = static_cast<int>(fc1.dims[0]);

  LinkerParams params;
  try {
    params = zero_params<float>(arch);
  } catch (const Error&) {
    throw Error("linker weights: shape mismatch (invalid architecture)");
  }
  auto expected = tensors(params);
  if (expected.size() != raw.size()) throw Error("linker weights: tensor count mismatch");
  for (std::size_t i = 0; i < expected.size(); ++i) {
    if (raw[i].name != expected[i].name || raw[i].dims != expected[i].dims) {
      throw Error("linker weights: shape mismatch in " + raw[i].name);
    }
    std::copy(raw[i].data.begin(), raw[i].data.end(), expected[i].data);
    if (expected[i].name.ends_with("running_var")) {
      for (float v : raw[i].data) {
        if (!(v > 0.0f)) throw Error("linker weights: non-positive running variance");
      }
    }
  }
  return params;
}

LinkerParams load_params(std::istream& in, const LinkerArch& expected) {
  auto p = load_params(in);
  if (!(p.arch == expected)) throw Error("linker weights: shape mismatch against the model architecture");
  return p;
}

void save_params_file(const LinkerParams& params, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  save_params(params, out);
}

LinkerParams load_params_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return load_params(in);
}

LinkerParams load_params_file(const std::filesystem::path& path, const LinkerArch& expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return load_params(in, expected);
}

template std::vector<TensorRef<float>> tensors(BasicParams<float>&);
template std::vector<TensorRef<double>> tensors(BasicParams<double>&);
template std::vector<TensorRef<const float>> tensors(const BasicParams<float>&);
template std::vector<TensorRef<const double>> tensors(const BasicParams<double>&);
template BasicParams<float> zero_params<float>(const LinkerArch&);
template BasicParams<double> zero_params<double>(const LinkerArch&);
template BasicParams<float> init_params<float>(const LinkerArch&, std::uint64_t);
template BasicParams<double> init_params<double>(const LinkerArch&, std::uint64_t);
template BasicParams<float> cast_params<float, double>(const BasicParams<double>&);
template BasicParams<double> cast_params<double, float>(const BasicParams<float>&);
template BasicParams<float> cast_params<float, float>(const BasicParams<float>&);
template BasicParams<double> cast_params<double, double>(const BasicParams<double>&);

}  // namespace mmtrack::linker
