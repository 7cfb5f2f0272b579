#pragma once

// Corpus files: one token-id sequence per line, space-separated decimal ids.

#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace moescope {

using Corpus = std::vector<std::vector<std::uint32_t>>;

inline void save_corpus(const Corpus& corpus, const std::string& path) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for writing: " + tmp);
    for (const auto& seq : corpus) {
      for (std::size_t i = 0; i < seq.size(); ++i) {
        if (i) out << ' ';
        out << seq[i];
      }
      out << '\n';
    }
    if (!out) throw std::runtime_error("write failed: " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    throw std::runtime_error("rename failed: " + path);
  }
}

inline Corpus load_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open corpus: " + path);
  Corpus corpus;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream iss(line);
    std::vector<std::uint32_t> seq;
    std::uint32_t tok;
    while (iss >> tok) seq.push_back(tok);
    if (!iss.eof()) {
      throw std::runtime_error("corpus parse error at line " +
                               std::to_string(corpus.size() + 1));
    }
    corpus.push_back(std::move(seq));
  }
  return corpus;
}

}  // namespace moescope
