#include "korr/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace korr {
namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

void write_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

void write_f64(std::ostream& os, double v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

void write_str(std::ostream& os, const std::string& s) {
  write_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::uint32_t read_u32(std::istream& is) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}

double read_f64(std::istream& is) {
  double v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}

std::string read_str(std::istream& is) {
  const std::uint32_t n = read_u32(is);
  std::string s(n, '\0');
  is.read(s.data(), n);
  return s;
}

}  // namespace

const Matrix& Checkpoint::matrix(const std::string& key) const {
  auto it = matrices_.find(key);
  if (it == matrices_.end()) {
    throw ConfigError("checkpoint: missing matrix '" + key + "'");
  }
  return it->second;
}

double Checkpoint::scalar(const std::string& key) const {
  auto it = scalars_.find(key);
  if (it == scalars_.end()) {
    throw ConfigError("checkpoint: missing scalar '" + key + "'");
  }
  return it->second;
}

const std::string& Checkpoint::str(const std::string& key) const {
  auto it = strings_.find(key);
  if (it == strings_.end()) {
    throw ConfigError("checkpoint: missing string '" + key + "'");
  }
  return it->second;
}

void Checkpoint::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("checkpoint: cannot open '" + path + "'");
  os.write(kMagic, 8);
  write_u32(os, static_cast<std::uint32_t>(matrices_.size()));
  write_u32(os, static_cast<std::uint32_t>(scalars_.size()));
  write_u32(os, static_cast<std::uint32_t>(strings_.size()));
  for (const auto& [key, m] : matrices_) {
    write_str(os, key);
    write_u32(os, static_cast<std::uint32_t>(m.rows()));
    write_u32(os, static_cast<std::uint32_t>(m.cols()));
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) {
        write_f64(os, m(r, c));
      }
    }
  }
  for (const auto& [key, v] : scalars_) {
    write_str(os, key);
    write_f64(os, v);
  }
  for (const auto& [key, v] : strings_) {
    write_str(os, key);
    write_str(os, v);
  }
  if (!os) throw ConfigError("checkpoint: write failed for '" + path + "'");
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("checkpoint: cannot open '" + path + "'");
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kMagic, 8) != 0) {
    throw ConfigError("checkpoint: bad magic in '" + path + "'");
  }
  Checkpoint ck;
  const std::uint32_t nm = read_u32(is);
  const std::uint32_t ns = read_u32(is);
  const std::uint32_t nt = read_u32(is);
  for (std::uint32_t i = 0; i < nm; ++i) {
    const std::string key = read_str(is);
    const std::uint32_t rows = read_u32(is);
    const std::uint32_t cols = read_u32(is);
    Matrix m(rows, cols);
    for (std::uint32_t r = 0; r < rows; ++r) {
      for (std::uint32_t c = 0; c < cols; ++c) {
        m(r, c) = read_f64(is);
      }
    }
    ck.matrices_[key] = std::move(m);
  }
  for (std::uint32_t i = 0; i < ns; ++i) {
    const std::string key = read_str(is);
    ck.scalars_[key] = read_f64(is);
  }
  for (std::uint32_t i = 0; i < nt; ++i) {
    const std::string key = read_str(is);
    ck.strings_[key] = read_str(is);
  }
  if (!is) throw ConfigError("checkpoint: truncated file '" + path + "'");
  return ck;
}

void Checkpoint::put_mlp(const std::string& prefix, const Mlp& mlp) {
  Matrix sizes(1, mlp.layer_sizes.size());
  for (std::size_t i = 0; i < mlp.layer_sizes.size(); ++i) {
    sizes(0, static_cast<Eigen::Index>(i)) = mlp.layer_sizes[i];
  }
  put(prefix + ".sizes", sizes);
  put(prefix + ".activation",
      mlp.activation == Activation::kReluHidden ? 0.0 : 1.0);
  for (int i = 0; i < mlp.num_layers(); ++i) {
    put(prefix + ".w" + std::to_string(i), mlp.weights[i]);
    put(prefix + ".b" + std::to_string(i), Matrix(mlp.biases[i]));
  }
}

Mlp Checkpoint::get_mlp(const std::string& prefix) const {
  Mlp mlp;
  const Matrix& sizes = matrix(prefix + ".sizes");
  for (Eigen::Index i = 0; i < sizes.cols(); ++i) {
    mlp.layer_sizes.push_back(static_cast<int>(sizes(0, i)));
  }
  mlp.activation = scalar(prefix + ".activation") == 0.0
                       ? Activation::kReluHidden
                       : Activation::kIdentity;
  for (std::size_t i = 0; i + 1 < mlp.layer_sizes.size(); ++i) {
    mlp.weights.push_back(matrix(prefix + ".w" + std::to_string(i)));
    mlp.biases.push_back(
        Vector(matrix(prefix + ".b" + std::to_string(i)).col(0)));
  }
  return mlp;
}

void Checkpoint::put_normalizer(const std::string& prefix,
                                const Normalizer& n) {
  put(prefix + ".mean", Matrix(n.mean));
  put(prefix + ".inv_std", Matrix(n.inv_std));
}

Normalizer Checkpoint::get_normalizer(const std::string& prefix) const {
  Normalizer n;
  n.mean = Vector(matrix(prefix + ".mean").col(0));
  n.inv_std = Vector(matrix(prefix + ".inv_std").col(0));
  return n;
}

}  // namespace korr
