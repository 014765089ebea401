#pragma once

// Byte-level corpora: each input file is one document encoded as raw byte
// ids (0..255), documents joined by separator id 0. The validation split is
// the trailing fraction of the packed stream.

#include <cstdint>
#include <string>
#include <vector>

namespace rom {

struct Corpus {
  std::vector<int32_t> train_ids;
  std::vector<int32_t> val_ids;

  static Corpus from_files(const std::vector<std::string>& paths, double val_fraction);
  static Corpus from_text(const std::string& text, double val_fraction);
};

// Deterministic synthetic text with several distinct generative modes in long
// blocks; stands in for a real corpus at desk scale.
std::string synthetic_text(int64_t chars, uint64_t seed);

}  // namespace rom
