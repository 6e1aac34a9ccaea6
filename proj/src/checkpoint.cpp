#include "airdde/checkpoint.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace airdde {

namespace {

constexpr const char* kMagic = "airdde-checkpoint";
constexpr int kVersion = 1;

std::string hex_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

double parse_double(const std::string& token, const std::filesystem::path& path) {
  char* end = nullptr;
  const double v = std::strtod(token.c_str(), &end);
  if (end == token.c_str() || *end != '\0') {
    throw std::runtime_error(path.string() + ": malformed value '" + token + "'");
  }
  return v;
}

}  // namespace

void Checkpoint::put_params(const ParamStore& params, const std::string& prefix) {
  for (std::size_t i = 0; i < params.size(); ++i) tensors[prefix + params.names()[i]] = params.tensors()[i];
}

void Checkpoint::get_params(ParamStore& params, const std::string& prefix) const {
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::string key = prefix + params.names()[i];
    auto it = tensors.find(key);
    if (it == tensors.end()) throw std::runtime_error("checkpoint is missing parameter '" + key + "'");
    if (it->second.shape() != params.tensors()[i].shape()) {
      throw std::runtime_error("checkpoint parameter '" + key + "' has shape " + shape_to_string(it->second.shape()) +
                               ", model expects " + shape_to_string(params.tensors()[i].shape()));
    }
    params.tensors()[i] = it->second;
  }
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out << kMagic << ' ' << kVersion << '\n';
  for (const auto& [key, value] : ckpt.meta) {
    if (key.find_first_of(" \t\n") != std::string::npos || value.find('\n') != std::string::npos) {
      throw std::invalid_argument("checkpoint meta entries must be single-line with whitespace-free keys: " + key);
    }
    out << "meta " << key << ' ' << value << '\n';
  }
  for (const auto& [name, t] : ckpt.tensors) {
    if (name.find_first_of(" \t\n") != std::string::npos) throw std::invalid_argument("bad tensor name: " + name);
    out << "tensor " << name << ' ' << t.rank();
    for (auto d : t.shape()) out << ' ' << d;
    out << '\n';
    for (std::size_t i = 0; i < t.numel(); ++i) {
      out << hex_double(t[i]) << ((i % 8 == 7 || i + 1 == t.numel()) ? '\n' : ' ');
    }
  }
  out << "end\n";
  if (!out) throw std::runtime_error("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  std::string magic;
  int version = 0;
  in >> magic >> version;
  if (magic != kMagic || version != kVersion) throw std::runtime_error(path.string() + ": not an airdde checkpoint");

  Checkpoint ckpt;
  std::string word;
  bool ended = false;
  while (in >> word) {
    if (word == "end") {
      ended = true;
      break;
    }
    if (word == "meta") {
      std::string key, value;
      in >> key;
      std::getline(in, value);
      if (!value.empty() && value.front() == ' ') value.erase(0, 1);
      ckpt.meta[key] = value;
    } else if (word == "tensor") {
      std::string name;
      std::size_t rank = 0;
      in >> name >> rank;
      Shape shape(rank);
      for (auto& d : shape) in >> d;
      if (!in || rank == 0) throw std::runtime_error(path.string() + ": bad header for tensor " + name);
      std::vector<double> data(shape_numel(shape));
      std::string token;
      for (auto& v : data) {
        if (!(in >> token)) throw std::runtime_error(path.string() + ": truncated tensor " + name);
        v = parse_double(token, path);
      }
      ckpt.tensors.emplace(name, Tensor(std::move(shape), std::move(data)));
    } else {
      throw std::runtime_error(path.string() + ": unexpected record '" + word + "'");
    }
  }
  if (!ended) throw std::runtime_error(path.string() + ": missing end marker");
  return ckpt;
}

}  // namespace airdde
