#include "unmt/checkpoint.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "unmt/errors.hpp"

namespace unmt {
namespace {

constexpr const char* kMagic = "unmt-checkpoint";
constexpr int kVersion = 1;

}  // namespace

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return &t;
  return nullptr;
}

const std::string& Checkpoint::meta(const std::string& key) const {
  auto it = metadata.find(key);
  if (it == metadata.end()) throw DataError("checkpoint has no metadata key '" + key + "'");
  return it->second;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp);
    if (!out) throw IoError("cannot write checkpoint " + tmp.string());
    out << kMagic << ' ' << kVersion << '\n';
    for (const auto& [key, value] : checkpoint.metadata) {
      if (key.find_first_of(" \n") != std::string::npos || value.find('\n') != std::string::npos) {
        throw ContractError("checkpoint metadata must be single-line, key without spaces: " + key);
      }
      out << "meta " << key << ' ' << value << '\n';
    }
    out << std::hexfloat;
    for (const auto& [name, tensor] : checkpoint.tensors) {
      if (name.find_first_of(" \n") != std::string::npos) {
        throw ContractError("tensor names must not contain whitespace: " + name);
      }
      out << "tensor " << name << ' ' << tensor.ndim();
      for (auto d : tensor.shape()) out << ' ' << d;
      out << '\n';
      bool first = true;
      for (Real v : tensor.values()) {
        if (!first) out << ' ';
        out << v;
        first = false;
      }
      out << '\n';
    }
    out << "end\n";
    if (!out) throw IoError("failed writing checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read checkpoint " + path.string());
  Checkpoint ckpt;
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(in, line)) throw ParseError("empty checkpoint", line_no);
  {
    std::istringstream header(line);
    std::string magic;
    int version = 0;
    header >> magic >> version;
    if (magic != kMagic || version != kVersion) throw ParseError("not a checkpoint file", line_no);
  }
  bool ended = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line == "end") {
      ended = true;
      break;
    }
    if (line.rfind("meta ", 0) == 0) {
      const auto space = line.find(' ', 5);
      if (space == std::string::npos) {
        ckpt.metadata[line.substr(5)] = "";
      } else {
        ckpt.metadata[line.substr(5, space - 5)] = line.substr(space + 1);
      }
      continue;
    }
    if (line.rfind("tensor ", 0) != 0) throw ParseError("unexpected record", line_no);
    std::istringstream header(line.substr(7));
    std::string name;
    std::size_t ndim = 0;
    header >> name >> ndim;
    Shape shape(ndim);
    for (auto& d : shape)
      if (!(header >> d)) throw ParseError("bad tensor header", line_no);
    std::string values_line;
    if (!std::getline(in, values_line)) throw ParseError("missing tensor values", line_no + 1);
    ++line_no;
    const std::size_t n = shape_numel(shape);
    std::vector<Real> values;
    values.reserve(n);
    const char* cursor = values_line.c_str();
    char* end = nullptr;
    for (std::size_t i = 0; i < n; ++i) {
      const Real v = std::strtod(cursor, &end);
      if (end == cursor) throw ParseError("expected " + std::to_string(n) + " values", line_no);
      values.push_back(v);
      cursor = end;
    }
    ckpt.tensors.emplace_back(name, Tensor::from_values(std::move(shape), std::move(values)));
  }
  if (!ended) throw ParseError("truncated checkpoint", line_no);
  return ckpt;
}

}  // namespace unmt
