#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "airdde/params.hpp"
#include "airdde/tensor.hpp"

namespace airdde {

/// Named tensors plus string metadata, stored as UTF-8 text:
///
///   airdde-checkpoint 1
///   meta <key> <value...>              (zero or more)
///   tensor <name> <rank> <d0> ... <dk>
///   <values, hexadecimal floating point, whitespace separated>
///   end
///
/// Values are written with printf "%a", so a save/load round trip is exact.
/// Entries are written in key order, so identical contents give identical bytes.
struct Checkpoint {
  std::map<std::string, Tensor> tensors;
  std::map<std::string, std::string> meta;

  void put_params(const ParamStore& params, const std::string& prefix = "");
  /// Copies tensors named `prefix + name` into `params`; throws on a missing
  /// name or a shape mismatch.
  void get_params(ParamStore& params, const std::string& prefix = "") const;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace airdde
