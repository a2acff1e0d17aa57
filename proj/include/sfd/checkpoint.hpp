#pragma once

// Binary checkpoints holding a complete RunState: both networks, the EMA
// shadow, optimizer moments, the RNG state, and the step counter.  Writes go
// through a temp file and an atomic rename so an interrupted save never
// leaves a partial checkpoint.  Loads validate the magic, version and every
// section length before the state is touched.
//
// The payload is raw little-endian IEEE doubles (the only platform this
// project targets); save -> load -> save is byte-identical.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "sfd/common.hpp"
#include "sfd/mlp.hpp"
#include "sfd/trainer.hpp"

namespace sfd {

namespace detail {

constexpr char kCkptMagic[8] = {'S', 'F', 'D', 'C', 'K', 'P', 'T', '1'};
constexpr char kNetMagic[8] = {'S', 'F', 'D', 'N', 'E', 'T', '0', '1'};
constexpr std::uint32_t kCkptVersion = 1;

inline void write_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
inline void write_i64(std::ostream& os, std::int64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }

inline std::uint32_t read_u32(std::istream& is) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 4);
  if (!is) {
    fail_io("checkpoint: truncated while reading u32");
  }
  return v;
}

inline std::int64_t read_i64(std::istream& is) {
  std::int64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 8);
  if (!is) {
    fail_io("checkpoint: truncated while reading i64");
  }
  return v;
}

inline void write_doubles(std::ostream& os, std::span<const double> v) {
  write_i64(os, static_cast<std::int64_t>(v.size()));
  os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
}

inline void read_doubles(std::istream& is, std::vector<double>& out, std::size_t expect) {
  const std::int64_t n = read_i64(is);
  if (n < 0 || static_cast<std::size_t>(n) != expect) {
    fail_io("checkpoint: section holds ", n, " doubles, expected ", expect);
  }
  out.resize(expect);
  is.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(expect * sizeof(double)));
  if (!is) {
    fail_io("checkpoint: truncated while reading doubles");
  }
}

inline void write_string(std::ostream& os, const std::string& s) {
  write_i64(os, static_cast<std::int64_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& is, std::size_t max_len = 1 << 20) {
  const std::int64_t n = read_i64(is);
  if (n < 0 || static_cast<std::size_t>(n) > max_len) {
    fail_io("checkpoint: implausible string length ", n);
  }
  std::string s(static_cast<std::size_t>(n), '\0');
  is.read(s.data(), n);
  if (!is) {
    fail_io("checkpoint: truncated while reading string");
  }
  return s;
}

inline void write_arch(std::ostream& os, const MlpArch& a) {
  write_u32(os, static_cast<std::uint32_t>(a.num_classes));
  write_u32(os, static_cast<std::uint32_t>(a.class_embed_dim));
  write_u32(os, static_cast<std::uint32_t>(a.time_embed_dim));
  write_u32(os, static_cast<std::uint32_t>(a.hidden.size()));
  for (int h : a.hidden) {
    write_u32(os, static_cast<std::uint32_t>(h));
  }
}

inline MlpArch read_arch(std::istream& is) {
  MlpArch a;
  a.num_classes = static_cast<int>(read_u32(is));
  a.class_embed_dim = static_cast<int>(read_u32(is));
  a.time_embed_dim = static_cast<int>(read_u32(is));
  const std::uint32_t layers = read_u32(is);
  if (layers == 0 || layers > 64) {
    fail_io("checkpoint: implausible layer count ", layers);
  }
  a.hidden.clear();
  for (std::uint32_t i = 0; i < layers; ++i) {
    a.hidden.push_back(static_cast<int>(read_u32(is)));
  }
  a.validate();
  return a;
}

inline void write_adam(std::ostream& os, const AdamState& st) {
  write_i64(os, st.t);
  write_doubles(os, st.m);
  write_doubles(os, st.v);
}

inline void read_adam(std::istream& is, AdamState& st, std::size_t n) {
  st.t = read_i64(is);
  read_doubles(is, st.m, n);
  read_doubles(is, st.v, n);
}

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& path, const RunState& s) {
  namespace fs = std::filesystem;
  const fs::path tmp = path.parent_path() / (path.filename().string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) {
      fail_io("save_checkpoint: cannot open ", tmp.string());
    }
    os.write(detail::kCkptMagic, sizeof(detail::kCkptMagic));
    detail::write_u32(os, detail::kCkptVersion);
    detail::write_arch(os, s.theta.arch());
    detail::write_i64(os, s.step);
    detail::write_u32(os, static_cast<std::uint32_t>(s.stage));
    detail::write_string(os, s.rng.serialize());
    detail::write_doubles(os, s.theta.params());
    detail::write_doubles(os, s.psi.params());
    detail::write_doubles(os, s.ema_theta);
    detail::write_adam(os, s.opt_theta);
    detail::write_adam(os, s.opt_psi);
    const double losses[4] = {s.loss_psi, s.loss_theta, s.loss_remain, s.loss_forget};
    detail::write_doubles(os, losses);
    if (!os) {
      fail_io("save_checkpoint: write failed for ", tmp.string());
    }
  }
  fs::rename(tmp, path);
}

// Parses and validates the whole file, then returns a fully formed state.
// Seed 0 in the constructor is immediately overwritten by the stored RNG.
inline RunState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) {
    fail_io("load_checkpoint: cannot open ", path.string());
  }
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, detail::kCkptMagic, 8) != 0) {
    fail_io("load_checkpoint: ", path.string(), " is not a checkpoint (bad magic)");
  }
  const std::uint32_t version = detail::read_u32(is);
  if (version != detail::kCkptVersion) {
    fail_io("load_checkpoint: unsupported version ", version, " (expected ", detail::kCkptVersion, ")");
  }
  const MlpArch arch = detail::read_arch(is);
  RunState s(arch, 0);
  s.step = detail::read_i64(is);
  if (s.step < 0) {
    fail_io("load_checkpoint: negative step counter");
  }
  s.stage = static_cast<int>(detail::read_u32(is));
  s.rng.deserialize(detail::read_string(is));
  const std::size_t n = arch.param_count();
  std::vector<double> buf;
  detail::read_doubles(is, buf, n);
  s.theta.set_params(buf);
  detail::read_doubles(is, buf, n);
  s.psi.set_params(buf);
  detail::read_doubles(is, s.ema_theta, n);
  detail::read_adam(is, s.opt_theta, n);
  detail::read_adam(is, s.opt_psi, n);
  detail::read_doubles(is, buf, 4);
  s.loss_psi = buf[0];
  s.loss_theta = buf[1];
  s.loss_remain = buf[2];
  s.loss_forget = buf[3];
  // Require exact end-of-file so trailing garbage is caught.
  is.peek();
  if (!is.eof()) {
    fail_io("load_checkpoint: trailing bytes after state in ", path.string());
  }
  return s;
}

// Bare-network files hold just an architecture and its weights; they carry
// pretrained teacher surrogates between the pretrain and run commands.

inline void save_network(const std::filesystem::path& path, const CondMlp& net) {
  namespace fs = std::filesystem;
  const fs::path tmp = path.parent_path() / (path.filename().string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) {
      fail_io("save_network: cannot open ", tmp.string());
    }
    os.write(detail::kNetMagic, sizeof(detail::kNetMagic));
    detail::write_u32(os, detail::kCkptVersion);
    detail::write_arch(os, net.arch());
    detail::write_doubles(os, net.params());
    if (!os) {
      fail_io("save_network: write failed for ", tmp.string());
    }
  }
  fs::rename(tmp, path);
}

inline CondMlp load_network(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) {
    fail_io("load_network: cannot open ", path.string());
  }
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, detail::kNetMagic, 8) != 0) {
    fail_io("load_network: ", path.string(), " is not a network file (bad magic)");
  }
  const std::uint32_t version = detail::read_u32(is);
  if (version != detail::kCkptVersion) {
    fail_io("load_network: unsupported version ", version, " (expected ", detail::kCkptVersion, ")");
  }
  const MlpArch arch = detail::read_arch(is);
  CondMlp net(arch);
  std::vector<double> buf;
  detail::read_doubles(is, buf, arch.param_count());
  net.set_params(buf);
  is.peek();
  if (!is.eof()) {
    fail_io("load_network: trailing bytes after weights in ", path.string());
  }
  return net;
}

}  // namespace sfd
