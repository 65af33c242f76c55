#pragma once

// Review ingestion, vocabularies, and labeled-sample generation for the two
// sampling protocols (prefix-expansion and one-record-per-user).

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "dhan/error.hpp"

namespace dhan {

struct ReviewEvent {
  std::string user_id;
  std::string item_id;
  std::int64_t timestamp = 0;
};

struct ItemMeta {
  std::string item_id;
  std::map<std::string, std::string> attributes;  // dimension name -> value
};

// Bidirectional string<->index maps per namespace; index 0 is padding.
class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(const std::vector<std::string>& namespaces);

  bool has_namespace(const std::string& ns) const;
  int get_or_add(const std::string& ns, const std::string& s);
  // -1 when absent.
  int find(const std::string& ns, const std::string& s) const;
  // Throws naming the id when absent.
  int at(const std::string& ns, const std::string& s) const;
  const std::string& name(const std::string& ns, int idx) const;
  // Count of real entries plus the padding slot.
  int size(const std::string& ns) const;
  std::vector<std::string> namespaces() const;

  std::string serialize() const;
  static Vocabulary deserialize(const std::string& text);
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

 private:
  struct Space {
    std::unordered_map<std::string, int> to_idx;
    std::vector<std::string> to_str{""};  // slot 0 reserved for padding
  };
  const Space& space(const std::string& ns) const;
  std::vector<std::pair<std::string, Space>> spaces_;
};

// One labeled instance. Histories are padded to t_max with index 0 and the
// mask marks real positions: mask[i] == 0 iff history_items[i] == 0.
struct Sample {
  int user = 0;
  std::vector<int> history_items;
  std::vector<std::vector<int>> history_attrs;  // [attr key][position]
  std::vector<std::uint8_t> mask;
  int target_item = 0;
  std::vector<int> target_attrs;  // [attr key]
  int label = 0;
};

struct DatasetStats {
  std::int64_t users = 0;
  std::int64_t goods = 0;
  std::int64_t categories = 0;
  std::int64_t samples = 0;
};

struct IngestResult {
  std::vector<ReviewEvent> events;  // per user in timestamp order, ties by input order
  std::vector<ItemMeta> metas;      // deduplicated by item id, last record wins
};

// Line-delimited JSON records; reviews need reviewerID/asin/unixReviewTime,
// metadata needs asin and categories (brand and price optional).
IngestResult ingest(const std::filesystem::path& reviews_path,
                    const std::filesystem::path& metadata_path);

// Keeps items whose category has strictly more than min_items items.
std::vector<ItemMeta> filter_small_categories(std::vector<ItemMeta> metas, int min_items);

// Replaces each numeric "price" attribute with a "price_bucket" quantile tag.
void bucket_prices(std::vector<ItemMeta>& metas, int buckets);

// Drops events whose item has no metadata record.
std::vector<ReviewEvent> drop_events_without_meta(std::vector<ReviewEvent> events,
                                                  const std::vector<ItemMeta>& metas);

// Requires every meta to carry all listed attribute keys; drops the rest.
std::vector<ItemMeta> require_attrs(std::vector<ItemMeta> metas,
                                    const std::vector<std::string>& attr_keys);

// Namespaces: "user", "item", then one per attribute key. Users and items are
// indexed in first-appearance order over events, attribute values in item
// vocabulary order.
Vocabulary build_vocab(const std::vector<ReviewEvent>& events, const std::vector<ItemMeta>& metas,
                       const std::vector<std::string>& attr_keys);

struct GenOptions {
  int t_max = 50;
  int neg_ratio = 1;
  std::uint64_t seed = 0;
};

// Prefix protocol: each of a user's reviews after the first becomes a
// positive whose history is every earlier review (most recent t_max kept),
// paired with neg_ratio negatives drawn from items the user never reviewed.
std::vector<Sample> generate_din_samples(const std::vector<ReviewEvent>& events,
                                         const std::vector<ItemMeta>& metas,
                                         const Vocabulary& vocab,
                                         const std::vector<std::string>& attr_keys,
                                         const GenOptions& opt);

// One record per user with at least 5 reviews: history is all but the last
// review, the last review is the positive target, plus one negative.
std::vector<Sample> generate_dien_samples(const std::vector<ReviewEvent>& events,
                                          const std::vector<ItemMeta>& metas,
                                          const Vocabulary& vocab,
                                          const std::vector<std::string>& attr_keys,
                                          const GenOptions& opt);

enum class SubsampleMode { events, users };

std::vector<ReviewEvent> subsample(std::vector<ReviewEvent> events, double fraction,
                                   SubsampleMode mode, std::uint64_t seed);

// Disjoint, exhaustive, user-grouped split.
std::pair<std::vector<Sample>, std::vector<Sample>> split_train_test(
    const std::vector<Sample>& samples, double test_fraction, std::uint64_t seed);

// Entity counts over what actually appears in the samples; categories are
// counted on the first attribute key.
DatasetStats stats(const std::vector<Sample>& samples);

std::string serialize_samples(const std::vector<Sample>& samples,
                              const std::vector<std::string>& attr_keys);
void save_samples(const std::filesystem::path& path, const std::vector<Sample>& samples,
                  const std::vector<std::string>& attr_keys);
// Returns the samples padded to t_max plus the attribute keys from the header.
std::pair<std::vector<Sample>, std::vector<std::string>> load_samples(
    const std::filesystem::path& path, int t_max);

}  // namespace dhan
