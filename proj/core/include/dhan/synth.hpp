#pragma once

// Synthetic review corpora with a planted per-user category preference, in
// the same line-delimited format the ingest step reads.

#include <cstdint>
#include <filesystem>

#include "dhan/data.hpp"

namespace dhan {

struct SynthConfig {
  int users = 1000;
  int items_per_category = 100;
  int categories = 6;
  int history_len = 10;
  int brands_per_category = 10;
  double signal_strength = 0.9;  // probability a review lands in the preferred category
  std::uint64_t seed = 0;

  void validate() const;
};

struct SynthCorpus {
  std::vector<ReviewEvent> events;
  std::vector<ItemMeta> metas;
};

SynthCorpus synth_generate(const SynthConfig& cfg);

// reviews.jsonl + meta.jsonl under dir; byte-identical for identical config.
void write_corpus(const std::filesystem::path& dir, const SynthCorpus& corpus);

}  // namespace dhan
