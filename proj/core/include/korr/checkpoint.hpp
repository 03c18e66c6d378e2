#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "korr/numeric.hpp"

namespace korr {

// Versioned binary container for model parameters and metadata.
// Layout: magic "KORRCKP1", then u32 counts of the three sections, then
// length-prefixed entries. Floats are little-endian 64-bit; matrices are
// written row-major with explicit (rows, cols).
class Checkpoint {
 public:
  static constexpr char kMagic[9] = "KORRCKP1";

  void put(const std::string& key, const Matrix& m) { matrices_[key] = m; }
  void put(const std::string& key, double v) { scalars_[key] = v; }
  void put(const std::string& key, const std::string& v) { strings_[key] = v; }

  bool has_matrix(const std::string& key) const {
    return matrices_.count(key) > 0;
  }
  bool has_scalar(const std::string& key) const {
    return scalars_.count(key) > 0;
  }
  bool has_string(const std::string& key) const {
    return strings_.count(key) > 0;
  }

  const Matrix& matrix(const std::string& key) const;
  double scalar(const std::string& key) const;
  const std::string& str(const std::string& key) const;

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);

  // Stable helpers for storing whole networks under a key prefix.
  void put_mlp(const std::string& prefix, const Mlp& mlp);
  Mlp get_mlp(const std::string& prefix) const;

  void put_normalizer(const std::string& prefix, const Normalizer& n);
  Normalizer get_normalizer(const std::string& prefix) const;

 private:
  std::map<std::string, Matrix> matrices_;
  std::map<std::string, double> scalars_;
  std::map<std::string, std::string> strings_;
};

}  // namespace korr
