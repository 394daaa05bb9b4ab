#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "sddec/policy.hpp"

namespace sddec {

// Textual checkpoint of named tensors. Values are written with 17 significant
// digits, which round-trips IEEE-754 doubles exactly.
inline void save_checkpoint(const std::vector<Parameter>& params, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  out << "sddec-checkpoint 1\n" << params.size() << "\n";
  char buf[64];
  for (const auto& p : params) {
    out << p.name << " " << p.value.rows() << " " << p.value.cols() << "\n";
    for (long r = 0; r < p.value.rows(); ++r) {
      for (long c = 0; c < p.value.cols(); ++c) {
        std::snprintf(buf, sizeof(buf), "%.17g", p.value(r, c));
        out << buf << (c + 1 == p.value.cols() ? '\n' : ' ');
      }
    }
  }
  if (!out) throw std::runtime_error("checkpoint write failed: " + path);
}

inline std::vector<Parameter> load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  std::string magic;
  int version = 0;
  in >> magic >> version;
  if (magic != "sddec-checkpoint" || version != 1) {
    throw std::runtime_error("not a checkpoint file: " + path);
  }
  std::size_t count = 0;
  in >> count;
  std::vector<Parameter> params;
  params.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Parameter p;
    long rows = 0, cols = 0;
    in >> p.name >> rows >> cols;
    if (!in || rows < 0 || cols < 0) throw std::runtime_error("corrupt checkpoint: " + path);
    p.value.resize(rows, cols);
    for (long r = 0; r < rows; ++r) {
      for (long c = 0; c < cols; ++c) in >> p.value(r, c);
    }
    params.push_back(std::move(p));
  }
  if (!in) throw std::runtime_error("corrupt checkpoint: " + path);
  return params;
}

// Restores a policy's parameters from a checkpoint; names and shapes must match.
inline void restore_parameters(Policy& policy, const std::vector<Parameter>& loaded) {
  auto& params = policy.parameters();
  if (params.size() != loaded.size()) {
    throw std::runtime_error("checkpoint has wrong number of tensors");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].name != loaded[i].name || params[i].value.rows() != loaded[i].value.rows() ||
        params[i].value.cols() != loaded[i].value.cols()) {
      throw std::runtime_error("checkpoint tensor mismatch at " + loaded[i].name);
    }
    params[i].value = loaded[i].value;
  }
}

}  // namespace sddec
