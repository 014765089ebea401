#include "rom/corpus.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include "rom/rng.hpp"

namespace rom {

namespace {

std::vector<int32_t> pack(const std::vector<std::string>& docs) {
  std::vector<int32_t> ids;
  size_t total = 0;
  for (const auto& d : docs) total += d.size() + 1;
  ids.reserve(total);
  for (const auto& d : docs) {
    for (unsigned char c : d) ids.push_back(static_cast<int32_t>(c));
    ids.push_back(0);  // document separator
  }
  return ids;
}

Corpus split(std::vector<int32_t> ids, double val_fraction) {
  if (val_fraction <= 0 || val_fraction >= 1)
    throw std::invalid_argument("corpus: val_fraction must be in (0,1)");
  const size_t val = static_cast<size_t>(static_cast<double>(ids.size()) * val_fraction);
  if (val < 1 || ids.size() - val < 1)
    throw std::invalid_argument("corpus: stream too short for the requested split");
  Corpus c;
  c.val_ids.assign(ids.end() - static_cast<ptrdiff_t>(val), ids.end());
  ids.resize(ids.size() - val);
  c.train_ids = std::move(ids);
  return c;
}

}  // namespace

Corpus Corpus::from_files(const std::vector<std::string>& paths, double val_fraction) {
  std::vector<std::string> docs;
  for (const auto& p : paths) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw std::runtime_error("corpus: cannot open '" + p + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    docs.push_back(ss.str());
  }
  return split(pack(docs), val_fraction);
}

Corpus Corpus::from_text(const std::string& text, double val_fraction) {
  return split(pack({text}), val_fraction);
}

namespace {

// Mode 0: arithmetic lines, e.g. "37 + 5 = 42\n".
void gen_arithmetic(std::string& out, size_t target, Rng& rng) {
  while (out.size() < target) {
    const int a = static_cast<int>(rng.next_u64() % 90) + 10;
    const int b = static_cast<int>(rng.next_u64() % 9) + 1;
    const bool plus = (rng.next_u64() & 1) != 0;
    out += std::to_string(a);
    out += plus ? " + " : " - ";
    out += std::to_string(b);
    out += " = ";
    out += std::to_string(plus ? a + b : a - b);
    out += '\n';
  }
}

// Mode 1: short sentences over a small lexicon.
void gen_sentences(std::string& out, size_t target, Rng& rng) {
  static const char* nouns[] = {"cat", "dog", "bird", "fish", "tree", "river", "stone", "cloud"};
  static const char* verbs[] = {"sees", "likes", "follows", "avoids", "finds", "watches"};
  static const char* adjs[] = {"small", "quick", "quiet", "bright", "old", "young"};
  while (out.size() < target) {
    out += "the ";
    out += adjs[rng.next_u64() % 6];
    out += ' ';
    out += nouns[rng.next_u64() % 8];
    out += ' ';
    out += verbs[rng.next_u64() % 6];
    out += " the ";
    out += nouns[rng.next_u64() % 8];
    out += ". ";
    if (rng.next_u64() % 5 == 0) out += '\n';
  }
}

// Mode 2: code-like nested blocks.
void gen_blocks(std::string& out, size_t target, Rng& rng) {
  static const char* vars = "xyzw";
  while (out.size() < target) {
    const int depth = static_cast<int>(rng.next_u64() % 3) + 1;
    for (int d = 0; d < depth; ++d) {
      out.append(static_cast<size_t>(2 * d), ' ');
      out += "if (";
      out += vars[rng.next_u64() % 4];
      out += (rng.next_u64() & 1) ? " > " : " < ";
      out += std::to_string(rng.next_u64() % 10);
      out += ") {\n";
    }
    out.append(static_cast<size_t>(2 * depth), ' ');
    out += vars[rng.next_u64() % 4];
    out += " = ";
    out += std::to_string(rng.next_u64() % 100);
    out += ";\n";
    for (int d = depth - 1; d >= 0; --d) {
      out.append(static_cast<size_t>(2 * d), ' ');
      out += "}\n";
    }
  }
}

// Mode 3: nucleotide-style strings with recurring motifs.
void gen_motifs(std::string& out, size_t target, Rng& rng) {
  static const char* motifs[] = {"ACGT", "GGCA", "TTAC", "CAGT"};
  while (out.size() < target) {
    const char* m = motifs[rng.next_u64() % 4];
    const int reps = static_cast<int>(rng.next_u64() % 6) + 2;
    for (int r = 0; r < reps; ++r) out += m;
    if (rng.next_u64() % 3 == 0) out += '\n';
  }
}

}  // namespace

std::string synthetic_text(int64_t chars, uint64_t seed) {
  if (chars < 1) throw std::invalid_argument("synthetic_text: chars must be positive");
  Rng rng(seed);
  std::string out;
  out.reserve(static_cast<size_t>(chars) + 4096);
  while (static_cast<int64_t>(out.size()) < chars) {
    const uint64_t mode = rng.next_u64() % 4;
    const size_t block = 512 + static_cast<size_t>(rng.next_u64() % 1536);
    const size_t target = std::min(out.size() + block, static_cast<size_t>(chars));
    switch (mode) {
      case 0: gen_arithmetic(out, target, rng); break;
      case 1: gen_sentences(out, target, rng); break;
      case 2: gen_blocks(out, target, rng); break;
      default: gen_motifs(out, target, rng); break;
    }
  }
  out.resize(static_cast<size_t>(chars));
  return out;
}

}  // namespace rom
