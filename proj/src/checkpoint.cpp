#include "cda/checkpoint.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace cda {
namespace {

std::string hex(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

double parse_hex(const std::string& tok) {
  char* end = nullptr;
  const double v = std::strtod(tok.c_str(), &end);
  if (end == tok.c_str() || *end != '\0') throw std::runtime_error("checkpoint: bad number '" + tok + "'");
  return v;
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  std::ostringstream os;
  os << kCheckpointMagic << '\n';
  for (const auto& [name, t] : ckpt.tensors) {
    os << "tensor " << name << ' ' << t.rows() << ' ' << t.cols() << '\n';
    for (std::size_t i = 0; i < t.size(); ++i) os << (i ? " " : "") << hex(t[i]);
    os << '\n';
  }
  for (const auto& [name, text] : ckpt.texts) {
    os << "text " << name << ' ' << text.size() << '\n' << text << '\n';
  }
  os << "end\n";
  return os.str();
}

Checkpoint parse_checkpoint(const std::string& content) {
  std::istringstream is(content);
  std::string line;
  std::getline(is, line);
  if (line != kCheckpointMagic) {
    if (line.rfind("CDA-CKPT-", 0) == 0)
      throw std::runtime_error("checkpoint version mismatch: expected " + std::string(kCheckpointMagic) +
                               ", found " + line);
    throw std::runtime_error(std::string(kCheckpointMagic) + " expected");
  }
  Checkpoint ckpt;
  while (std::getline(is, line)) {
    if (line == "end") return ckpt;
    std::istringstream hs(line);
    std::string kind, name;
    hs >> kind >> name;
    if (kind == "tensor") {
      std::size_t rows = 0, cols = 0;
      hs >> rows >> cols;
      std::string values;
      std::getline(is, values);
      std::istringstream vs(values);
      std::vector<double> data;
      data.reserve(rows * cols);
      std::string tok;
      while (vs >> tok) data.push_back(parse_hex(tok));
      if (data.size() != rows * cols)
        throw std::runtime_error("checkpoint: tensor " + name + " has " + std::to_string(data.size()) +
                                 " values, expected " + std::to_string(rows * cols));
      ckpt.tensors.emplace(name, Tensor(rows, cols, std::move(data)));
    } else if (kind == "text") {
      std::size_t len = 0;
      hs >> len;
      std::string text(len, '\0');
      is.read(text.data(), static_cast<std::streamsize>(len));
      if (static_cast<std::size_t>(is.gcount()) != len) throw std::runtime_error("checkpoint: truncated text " + name);
      is.get();  // trailing newline
      ckpt.texts.emplace(name, std::move(text));
    } else {
      throw std::runtime_error("checkpoint: unexpected record '" + kind + "'");
    }
  }
  throw std::runtime_error("checkpoint: missing end marker (truncated file?)");
}

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out << serialize_checkpoint(ckpt);
  if (!out) throw std::runtime_error("failed writing checkpoint " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_checkpoint(ss.str());
}

}  // namespace cda
