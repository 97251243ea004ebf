#include "claw/snapshot.hpp"

#include <cmath>
#include <cstdint>
#include <fstream>

#include "claw/errors.hpp"

namespace claw {

void compute_induced(LayerSnapshot& ls) {
  const std::size_t in = ls.in, out = ls.out;
  std::vector<double> one_bp(out, 1.0);  // per-neuron multiplier mean
  std::vector<double> vcoef(out, 0.0);   // per-neuron multiplier variance
  for (std::size_t j = 0; j < out; ++j) {
    switch (ls.mode) {
      case AdaptMode::stochastic: {
        // Operation order mirrors the graph expressions in the layer's KL so
        // a snapshot of a layer reproduces its induced Gaussian bit-exactly.
        const double b = ls.s[j] * stable_sigmoid(ls.a[j]) - 1.0;
        one_bp[j] = b * ls.p[j] + 1.0;
        vcoef[j] = (b * b) * (ls.p[j] * (1.0 - ls.p[j]));
        break;
      }
      case AdaptMode::always:
        one_bp[j] = ls.s[j] * stable_sigmoid(ls.a[j]);
        break;
      case AdaptMode::never:
        break;
    }
  }
  ls.w_mean.resize(in * out);
  ls.w_var.resize(in * out);
  ls.b_mean.resize(out);
  ls.b_var.resize(out);
  for (std::size_t i = 0; i < in; ++i) {
    for (std::size_t j = 0; j < out; ++j) {
      const double g = ls.gamma[i * out + j];
      ls.w_mean[i * out + j] = g * one_bp[j];
      ls.w_var[i * out + j] = g * g * vcoef[j] + kVarFloor;
    }
  }
  for (std::size_t j = 0; j < out; ++j) {
    const double g = ls.bias_gamma[j];
    ls.b_mean[j] = g * one_bp[j];
    ls.b_var[j] = g * g * vcoef[j] + kVarFloor;
  }
}

namespace {

constexpr char kMagic[5] = {'C', 'L', 'A', 'W', '1'};

void write_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void write_i32(std::ostream& os, std::int32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void write_doubles(std::ostream& os, const std::vector<double>& v) {
  os.write(reinterpret_cast<const char*>(v.data()),
           static_cast<std::streamsize>(v.size() * sizeof(double)));
}

struct Reader {
  std::ifstream is;
  std::size_t offset = 0;

  explicit Reader(const std::string& path) : is(path, std::ios::binary) {
    if (!is) throw FormatError("snapshot: cannot open " + path);
  }

  void read(void* dst, std::size_t n, const char* what) {
    is.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is.gcount()) != n) {
      throw FormatError("snapshot: truncated while reading " + std::string(what) +
                        " at byte offset " + std::to_string(offset));
    }
    offset += n;
  }

  std::uint32_t u32(const char* what) {
    std::uint32_t v = 0;
    read(&v, sizeof v, what);
    return v;
  }

  std::int32_t i32(const char* what) {
    std::int32_t v = 0;
    read(&v, sizeof v, what);
    return v;
  }

  std::uint8_t u8(const char* what) {
    std::uint8_t v = 0;
    read(&v, sizeof v, what);
    return v;
  }

  std::vector<double> doubles(std::size_t n, const char* what) {
    std::vector<double> v(n);
    read(v.data(), n * sizeof(double), what);
    return v;
  }
};

void write_layer(std::ostream& os, const LayerSnapshot& ls) {
  write_u32(os, static_cast<std::uint32_t>(ls.in));
  write_u32(os, static_cast<std::uint32_t>(ls.out));
  const std::uint8_t act = static_cast<std::uint8_t>(ls.act);
  const std::uint8_t mode = static_cast<std::uint8_t>(ls.mode);
  os.write(reinterpret_cast<const char*>(&act), 1);
  os.write(reinterpret_cast<const char*>(&mode), 1);
  write_doubles(os, ls.gamma);
  write_doubles(os, ls.bias_gamma);
  write_doubles(os, ls.p);
  write_doubles(os, ls.a);
  write_doubles(os, ls.s);
}

LayerSnapshot read_layer(Reader& r) {
  LayerSnapshot ls;
  ls.in = r.u32("layer in-width");
  ls.out = r.u32("layer out-width");
  if (ls.in == 0 || ls.out == 0 || ls.in > (1u << 24) || ls.out > (1u << 24)) {
    throw FormatError("snapshot: implausible layer shape " + std::to_string(ls.in) + "x" +
                      std::to_string(ls.out) + " at byte offset " + std::to_string(r.offset - 8));
  }
  const std::uint8_t act = r.u8("activation");
  const std::uint8_t mode = r.u8("adapt mode");
  if (act > 1 || mode > 2) {
    throw FormatError("snapshot: bad enum value at byte offset " + std::to_string(r.offset - 1));
  }
  ls.act = static_cast<Activation>(act);
  ls.mode = static_cast<AdaptMode>(mode);
  ls.gamma = r.doubles(ls.in * ls.out, "gamma");
  ls.bias_gamma = r.doubles(ls.out, "bias_gamma");
  ls.p = r.doubles(ls.out, "p");
  ls.a = r.doubles(ls.out, "a");
  ls.s = r.doubles(ls.out, "s");
  compute_induced(ls);
  return ls;
}

}  // namespace

void save_snapshot(const PosteriorSnapshot& snap, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError("snapshot: cannot open " + path + " for writing");
  os.write(kMagic, sizeof kMagic);
  const std::uint8_t hm = static_cast<std::uint8_t>(snap.head_mode);
  os.write(reinterpret_cast<const char*>(&hm), 1);
  write_u32(os, static_cast<std::uint32_t>(snap.hidden.size()));
  for (const auto& ls : snap.hidden) write_layer(os, ls);
  write_u32(os, static_cast<std::uint32_t>(snap.heads.size()));
  for (const auto& [task, ls] : snap.heads) {
    write_i32(os, task);
    write_layer(os, ls);
  }
  if (!os) throw FormatError("snapshot: write failed for " + path);
}

PosteriorSnapshot load_snapshot(const std::string& path) {
  Reader r(path);
  char magic[5];
  r.read(magic, 5, "magic");
  if (std::string(magic, 5) != std::string(kMagic, 5)) {
    throw FormatError("snapshot: bad magic at byte offset 0 in " + path);
  }
  PosteriorSnapshot snap;
  const std::uint8_t hm = r.u8("head mode");
  if (hm > 1) throw FormatError("snapshot: bad head mode at byte offset 5");
  snap.head_mode = static_cast<HeadMode>(hm);
  const std::uint32_t n_hidden = r.u32("hidden count");
  for (std::uint32_t i = 0; i < n_hidden; ++i) snap.hidden.push_back(read_layer(r));
  const std::uint32_t n_heads = r.u32("head count");
  for (std::uint32_t i = 0; i < n_heads; ++i) {
    const std::int32_t task = r.i32("head task id");
    snap.heads.emplace(task, read_layer(r));
  }
  return snap;
}

}  // namespace claw
