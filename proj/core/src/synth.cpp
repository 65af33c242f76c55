#include "dhan/synth.hpp"

#include <algorithm>
#include <random>

#include <json.hpp>

#include "dhan/fsio.hpp"

namespace dhan {

void SynthConfig::validate() const {
  if (users < 1) throw ConfigError("synth.users: must be >= 1");
  if (items_per_category < 1) throw ConfigError("synth.items_per_category: must be >= 1");
  if (categories < 1) throw ConfigError("synth.categories: must be >= 1");
  if (history_len < 1) throw ConfigError("synth.history_len: must be >= 1");
  if (brands_per_category < 1) throw ConfigError("synth.brands_per_category: must be >= 1");
  if (!(signal_strength > 0.5 && signal_strength <= 1.0))
    throw ConfigError("synth.signal_strength: must be in (0.5, 1], got " +
                      std::to_string(signal_strength));
}

SynthCorpus synth_generate(const SynthConfig& cfg) {
  cfg.validate();
  std::mt19937 rng(static_cast<std::uint32_t>(cfg.seed));
  SynthCorpus out;

  const int n_items = cfg.categories * cfg.items_per_category;
  out.metas.reserve(n_items);
  for (int c = 0; c < cfg.categories; ++c)
    for (int j = 0; j < cfg.items_per_category; ++j) {
      ItemMeta m;
      m.item_id = "i" + std::to_string(c) + "_" + std::to_string(j);
      m.attributes["category"] = "cat" + std::to_string(c);
      m.attributes["brand"] =
          "brand" + std::to_string(c) + "_" + std::to_string(j % cfg.brands_per_category);
      m.attributes["price"] = nlohmann::json(1.0 + (j % 100)).dump();
      out.metas.push_back(std::move(m));
    }

  std::uniform_int_distribution<int> pick_cat(0, cfg.categories - 1);
  std::uniform_int_distribution<int> pick_item(0, cfg.items_per_category - 1);
  std::uniform_int_distribution<int> pick_any(0, n_items - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  for (int u = 0; u < cfg.users; ++u) {
    const int preferred = pick_cat(rng);
    for (int t = 0; t < cfg.history_len; ++t) {
      int cat, j;
      if (unit(rng) < cfg.signal_strength) {
        cat = preferred;
        j = pick_item(rng);
      } else {
        const int flat = pick_any(rng);
        cat = flat / cfg.items_per_category;
        j = flat % cfg.items_per_category;
      }
      ReviewEvent e;
      e.user_id = "u" + std::to_string(u);
      e.item_id = "i" + std::to_string(cat) + "_" + std::to_string(j);
      e.timestamp = 1000 + t;
      out.events.push_back(std::move(e));
    }
  }
  // Randomized emission order; ingest re-sorts per user by timestamp.
  std::shuffle(out.events.begin(), out.events.end(), rng);
  return out;
}

void write_corpus(const std::filesystem::path& dir, const SynthCorpus& corpus) {
  std::string reviews;
  for (const ReviewEvent& e : corpus.events) {
    nlohmann::json j{{"reviewerID", e.user_id}, {"asin", e.item_id}, {"unixReviewTime", e.timestamp}};
    reviews += j.dump() + "\n";
  }
  std::string metas;
  for (const ItemMeta& m : corpus.metas) {
    nlohmann::json j{{"asin", m.item_id},
                     {"categories", nlohmann::json::array({nlohmann::json::array(
                         {m.attributes.at("category")})})},
                     {"brand", m.attributes.at("brand")},
                     {"price", std::stod(m.attributes.at("price"))}};
    metas += j.dump() + "\n";
  }
  write_file_atomic(dir / "reviews.jsonl", reviews);
  write_file_atomic(dir / "meta.jsonl", metas);
}

}  // namespace dhan
