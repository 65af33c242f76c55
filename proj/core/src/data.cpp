#include "dhan/data.hpp"

#include <algorithm>
#include <random>
#include <sstream>

#include <json.hpp>

#include "dhan/fsio.hpp"

namespace dhan {

// ---------------------------------------------------------------------------
// Vocabulary

Vocabulary::Vocabulary(const std::vector<std::string>& namespaces) {
  for (const std::string& ns : namespaces) spaces_.emplace_back(ns, Space{});
}

bool Vocabulary::has_namespace(const std::string& ns) const {
  for (const auto& [name, sp] : spaces_)
    if (name == ns) return true;
  return false;
}

const Vocabulary::Space& Vocabulary::space(const std::string& ns) const {
  for (const auto& [name, sp] : spaces_)
    if (name == ns) return sp;
  throw ParseError("vocabulary: unknown namespace \"" + ns + "\"");
}

int Vocabulary::get_or_add(const std::string& ns, const std::string& s) {
  for (auto& [name, sp] : spaces_)
    if (name == ns) {
      auto it = sp.to_idx.find(s);
      if (it != sp.to_idx.end()) return it->second;
      const int idx = static_cast<int>(sp.to_str.size());
      sp.to_idx.emplace(s, idx);
      sp.to_str.push_back(s);
      return idx;
    }
  throw ParseError("vocabulary: unknown namespace \"" + ns + "\"");
}

int Vocabulary::find(const std::string& ns, const std::string& s) const {
  const Space& sp = space(ns);
  auto it = sp.to_idx.find(s);
  return it == sp.to_idx.end() ? -1 : it->second;
}

int Vocabulary::at(const std::string& ns, const std::string& s) const {
  const int idx = find(ns, s);
  if (idx < 0) throw ParseError("vocabulary miss: \"" + s + "\" in namespace \"" + ns + "\"");
  return idx;
}

const std::string& Vocabulary::name(const std::string& ns, int idx) const {
  const Space& sp = space(ns);
  if (idx < 0 || idx >= static_cast<int>(sp.to_str.size()))
    throw ParseError("vocabulary: index " + std::to_string(idx) + " out of range in \"" + ns + "\"");
  return sp.to_str[idx];
}

int Vocabulary::size(const std::string& ns) const {
  return static_cast<int>(space(ns).to_str.size());
}

std::vector<std::string> Vocabulary::namespaces() const {
  std::vector<std::string> out;
  for (const auto& [name, sp] : spaces_) out.push_back(name);
  return out;
}

std::string Vocabulary::serialize() const {
  std::string out;
  for (const auto& [name, sp] : spaces_)
    for (size_t i = 1; i < sp.to_str.size(); ++i)
      out += name + "\t" + sp.to_str[i] + "\t" + std::to_string(i) + "\n";
  return out;
}

Vocabulary Vocabulary::deserialize(const std::string& text) {
  Vocabulary v;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const size_t t1 = line.find('\t');
    const size_t t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
    if (t2 == std::string::npos)
      throw ParseError("vocabulary: malformed line " + std::to_string(lineno));
    const std::string ns = line.substr(0, t1);
    const std::string s = line.substr(t1 + 1, t2 - t1 - 1);
    const int idx = std::stoi(line.substr(t2 + 1));
    if (!v.has_namespace(ns)) v.spaces_.emplace_back(ns, Space{});
    for (auto& [name, sp] : v.spaces_)
      if (name == ns) {
        if (idx != static_cast<int>(sp.to_str.size()))
          throw ParseError("vocabulary: non-contiguous index at line " + std::to_string(lineno));
        sp.to_idx.emplace(s, idx);
        sp.to_str.push_back(s);
      }
  }
  return v;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  write_file_atomic(path, serialize());
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  return deserialize(read_file(path));
}

// ---------------------------------------------------------------------------
// Ingestion

namespace {

nlohmann::json parse_json_line(const std::string& line, const std::filesystem::path& path,
                               int lineno) {
  nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object())
    throw ParseError(path.filename().string() + ": malformed record at line " +
                     std::to_string(lineno));
  return j;
}

const nlohmann::json& require_field(const nlohmann::json& j, const char* field,
                                    const std::filesystem::path& path, int lineno) {
  auto it = j.find(field);
  if (it == j.end())
    throw ParseError(path.filename().string() + ": missing field \"" + field + "\" at line " +
                     std::to_string(lineno));
  return *it;
}

// The first listed category path; the tag is its most specific component.
std::string category_tag(const nlohmann::json& cats, const std::filesystem::path& path,
                         int lineno) {
  if (cats.is_array() && !cats.empty()) {
    const nlohmann::json& first = cats[0];
    if (first.is_string()) return first.get<std::string>();
    if (first.is_array() && !first.empty() && first.back().is_string())
      return first.back().get<std::string>();
  }
  throw ParseError(path.filename().string() + ": missing field \"categories\" at line " +
                   std::to_string(lineno));
}

}  // namespace

IngestResult ingest(const std::filesystem::path& reviews_path,
                    const std::filesystem::path& metadata_path) {
  IngestResult out;

  {
    std::istringstream in(read_file(reviews_path));
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      const nlohmann::json j = parse_json_line(line, reviews_path, lineno);
      ReviewEvent e;
      e.user_id = require_field(j, "reviewerID", reviews_path, lineno).get<std::string>();
      e.item_id = require_field(j, "asin", reviews_path, lineno).get<std::string>();
      e.timestamp = require_field(j, "unixReviewTime", reviews_path, lineno).get<std::int64_t>();
      if (e.user_id.empty() || e.item_id.empty())
        throw ParseError(reviews_path.filename().string() + ": empty id at line " +
                         std::to_string(lineno));
      if (e.timestamp < 0)
        throw ParseError(reviews_path.filename().string() + ": negative timestamp at line " +
                         std::to_string(lineno));
      out.events.push_back(std::move(e));
    }
  }

  {
    std::istringstream in(read_file(metadata_path));
    std::string line;
    int lineno = 0;
    std::unordered_map<std::string, size_t> by_id;
    for (; std::getline(in, line);) {
      ++lineno;
      if (line.empty()) continue;
      const nlohmann::json j = parse_json_line(line, metadata_path, lineno);
      ItemMeta m;
      m.item_id = require_field(j, "asin", metadata_path, lineno).get<std::string>();
      if (m.item_id.empty())
        throw ParseError(metadata_path.filename().string() + ": empty id at line " +
                         std::to_string(lineno));
      m.attributes["category"] =
          category_tag(require_field(j, "categories", metadata_path, lineno), metadata_path, lineno);
      if (auto it = j.find("brand"); it != j.end() && it->is_string())
        m.attributes["brand"] = it->get<std::string>();
      if (auto it = j.find("price"); it != j.end() && it->is_number())
        m.attributes["price"] = nlohmann::json(it->get<double>()).dump();
      auto [pos, inserted] = by_id.emplace(m.item_id, out.metas.size());
      if (inserted)
        out.metas.push_back(std::move(m));
      else
        out.metas[pos->second] = std::move(m);  // last record wins
    }
  }

  // Per-user timestamp order; stable sort keeps input order on ties and
  // leaves the user blocks in first-appearance order.
  std::unordered_map<std::string, int> user_order;
  for (const ReviewEvent& e : out.events)
    user_order.emplace(e.user_id, static_cast<int>(user_order.size()));
  std::stable_sort(out.events.begin(), out.events.end(),
                   [&](const ReviewEvent& a, const ReviewEvent& b) {
                     const int ua = user_order.at(a.user_id), ub = user_order.at(b.user_id);
                     if (ua != ub) return ua < ub;
                     return a.timestamp < b.timestamp;
                   });
  return out;
}

std::vector<ItemMeta> filter_small_categories(std::vector<ItemMeta> metas, int min_items) {
  if (min_items < 0) throw ConfigError("filter_small_categories: min_items must be >= 0");
  std::unordered_map<std::string, int> counts;
  for (const ItemMeta& m : metas) {
    auto it = m.attributes.find("category");
    if (it != m.attributes.end()) ++counts[it->second];
  }
  std::erase_if(metas, [&](const ItemMeta& m) {
    auto it = m.attributes.find("category");
    return it == m.attributes.end() || counts[it->second] <= min_items;
  });
  return metas;
}

void bucket_prices(std::vector<ItemMeta>& metas, int buckets) {
  if (buckets < 1) throw ConfigError("bucket_prices: buckets must be >= 1");
  std::vector<double> prices;
  for (const ItemMeta& m : metas)
    if (auto it = m.attributes.find("price"); it != m.attributes.end())
      prices.push_back(std::stod(it->second));
  if (prices.empty()) return;
  std::sort(prices.begin(), prices.end());
  for (ItemMeta& m : metas) {
    auto it = m.attributes.find("price");
    if (it == m.attributes.end()) continue;
    const double p = std::stod(it->second);
    const auto rank = std::lower_bound(prices.begin(), prices.end(), p) - prices.begin();
    int b = static_cast<int>(rank * buckets / prices.size());
    b = std::min(b, buckets - 1);
    m.attributes["price_bucket"] = "price_q" + std::to_string(b);
  }
}

std::vector<ReviewEvent> drop_events_without_meta(std::vector<ReviewEvent> events,
                                                  const std::vector<ItemMeta>& metas) {
  std::unordered_set<std::string> known;
  for (const ItemMeta& m : metas) known.insert(m.item_id);
  std::erase_if(events, [&](const ReviewEvent& e) { return !known.contains(e.item_id); });
  return events;
}

std::vector<ItemMeta> require_attrs(std::vector<ItemMeta> metas,
                                    const std::vector<std::string>& attr_keys) {
  std::erase_if(metas, [&](const ItemMeta& m) {
    for (const std::string& k : attr_keys)
      if (!m.attributes.contains(k)) return true;
    return false;
  });
  return metas;
}

Vocabulary build_vocab(const std::vector<ReviewEvent>& events, const std::vector<ItemMeta>& metas,
                       const std::vector<std::string>& attr_keys) {
  std::vector<std::string> namespaces{"user", "item"};
  namespaces.insert(namespaces.end(), attr_keys.begin(), attr_keys.end());
  Vocabulary v(namespaces);
  for (const ReviewEvent& e : events) {
    v.get_or_add("user", e.user_id);
    v.get_or_add("item", e.item_id);
  }
  std::unordered_map<std::string, const ItemMeta*> by_id;
  for (const ItemMeta& m : metas) by_id[m.item_id] = &m;
  for (int i = 1; i < v.size("item"); ++i) {
    auto it = by_id.find(v.name("item", i));
    if (it == by_id.end()) continue;
    for (const std::string& k : attr_keys) {
      auto a = it->second->attributes.find(k);
      if (a != it->second->attributes.end()) v.get_or_add(k, a->second);
    }
  }
  return v;
}

// ---------------------------------------------------------------------------
// Sample generation

namespace {

struct ItemTable {
  // item index -> attribute index per key; 0 for the padding item.
  std::vector<std::vector<int>> attrs;  // [key][item]
  std::vector<int> all_items;           // indices 1..n-1
};

ItemTable index_items(const std::vector<ItemMeta>& metas, const Vocabulary& vocab,
                      const std::vector<std::string>& attr_keys) {
  ItemTable t;
  const int n = vocab.size("item");
  t.attrs.assign(attr_keys.size(), std::vector<int>(n, 0));
  std::unordered_map<std::string, const ItemMeta*> by_id;
  for (const ItemMeta& m : metas) by_id[m.item_id] = &m;
  for (int i = 1; i < n; ++i) {
    const std::string& id = vocab.name("item", i);
    auto it = by_id.find(id);
    if (it == by_id.end()) throw ParseError("vocabulary miss: no metadata for item \"" + id + "\"");
    for (size_t k = 0; k < attr_keys.size(); ++k) {
      auto a = it->second->attributes.find(attr_keys[k]);
      if (a == it->second->attributes.end())
        throw ParseError("item \"" + id + "\" is missing attribute \"" + attr_keys[k] + "\"");
      t.attrs[k][i] = vocab.at(attr_keys[k], a->second);
    }
    t.all_items.push_back(i);
  }
  return t;
}

Sample make_sample(std::span<const int> history, int target, int label, int user,
                   const ItemTable& table, int t_max) {
  Sample s;
  s.user = user;
  s.label = label;
  s.target_item = target;
  const int keep = std::min<int>(static_cast<int>(history.size()), t_max);
  const auto recent = history.subspan(history.size() - keep, keep);
  s.history_items.assign(t_max, 0);
  s.mask.assign(t_max, 0);
  s.history_attrs.assign(table.attrs.size(), std::vector<int>(t_max, 0));
  for (int i = 0; i < keep; ++i) {
    s.history_items[i] = recent[i];
    s.mask[i] = 1;
    for (size_t k = 0; k < table.attrs.size(); ++k) s.history_attrs[k][i] = table.attrs[k][recent[i]];
  }
  s.target_attrs.resize(table.attrs.size());
  for (size_t k = 0; k < table.attrs.size(); ++k) s.target_attrs[k] = table.attrs[k][target];
  return s;
}

int draw_negative(const ItemTable& table, const std::unordered_set<int>& reviewed,
                  std::mt19937& rng) {
  if (table.all_items.size() <= reviewed.size())
    throw ParseError("negative sampling: no items outside the user's review set");
  std::uniform_int_distribution<size_t> dist(0, table.all_items.size() - 1);
  for (;;) {
    const int candidate = table.all_items[dist(rng)];
    if (!reviewed.contains(candidate)) return candidate;
  }
}

template <class PerUser>
void for_each_user_run(const std::vector<ReviewEvent>& events, const Vocabulary& vocab,
                       PerUser fn) {
  size_t i = 0;
  while (i < events.size()) {
    size_t j = i;
    while (j < events.size() && events[j].user_id == events[i].user_id) ++j;
    std::vector<int> items;
    items.reserve(j - i);
    for (size_t k = i; k < j; ++k) items.push_back(vocab.at("item", events[k].item_id));
    fn(vocab.at("user", events[i].user_id), items);
    i = j;
  }
}

}  // namespace

std::vector<Sample> generate_din_samples(const std::vector<ReviewEvent>& events,
                                         const std::vector<ItemMeta>& metas,
                                         const Vocabulary& vocab,
                                         const std::vector<std::string>& attr_keys,
                                         const GenOptions& opt) {
  const ItemTable table = index_items(metas, vocab, attr_keys);
  std::mt19937 rng(static_cast<std::uint32_t>(opt.seed));
  std::vector<Sample> out;
  for_each_user_run(events, vocab, [&](int user, const std::vector<int>& items) {
    if (items.size() < 2) return;
    const std::unordered_set<int> reviewed(items.begin(), items.end());
    for (size_t k = 1; k < items.size(); ++k) {
      const std::span<const int> history(items.data(), k);
      out.push_back(make_sample(history, items[k], 1, user, table, opt.t_max));
      for (int n = 0; n < opt.neg_ratio; ++n)
        out.push_back(make_sample(history, draw_negative(table, reviewed, rng), 0, user, table,
                                  opt.t_max));
    }
  });
  return out;
}

std::vector<Sample> generate_dien_samples(const std::vector<ReviewEvent>& events,
                                          const std::vector<ItemMeta>& metas,
                                          const Vocabulary& vocab,
                                          const std::vector<std::string>& attr_keys,
                                          const GenOptions& opt) {
  const ItemTable table = index_items(metas, vocab, attr_keys);
  std::mt19937 rng(static_cast<std::uint32_t>(opt.seed));
  std::vector<Sample> out;
  for_each_user_run(events, vocab, [&](int user, const std::vector<int>& items) {
    if (items.size() < 5) return;
    const std::unordered_set<int> reviewed(items.begin(), items.end());
    const std::span<const int> history(items.data(), items.size() - 1);
    out.push_back(make_sample(history, items.back(), 1, user, table, opt.t_max));
    out.push_back(make_sample(history, draw_negative(table, reviewed, rng), 0, user, table,
                              opt.t_max));
  });
  return out;
}

std::vector<ReviewEvent> subsample(std::vector<ReviewEvent> events, double fraction,
                                   SubsampleMode mode, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0))
    throw ConfigError("subsample: fraction must be in (0, 1], got " + std::to_string(fraction));
  if (fraction == 1.0) return events;
  std::mt19937 rng(static_cast<std::uint32_t>(seed));
  if (mode == SubsampleMode::events) {
    std::uniform_real_distribution<double> dist(0.0, 1.0);
    std::erase_if(events, [&](const ReviewEvent&) { return dist(rng) >= fraction; });
    return events;
  }
  std::vector<std::string> users;
  std::unordered_set<std::string> seen;
  for (const ReviewEvent& e : events)
    if (seen.insert(e.user_id).second) users.push_back(e.user_id);
  std::shuffle(users.begin(), users.end(), rng);
  const size_t keep = static_cast<size_t>(std::llround(fraction * static_cast<double>(users.size())));
  const std::unordered_set<std::string> kept(users.begin(), users.begin() + std::min(keep, users.size()));
  std::erase_if(events, [&](const ReviewEvent& e) { return !kept.contains(e.user_id); });
  return events;
}

std::pair<std::vector<Sample>, std::vector<Sample>> split_train_test(
    const std::vector<Sample>& samples, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw ConfigError("split_train_test: test_fraction must be in (0, 1), got " +
                      std::to_string(test_fraction));
  std::vector<int> users;
  std::unordered_set<int> seen;
  for (const Sample& s : samples)
    if (seen.insert(s.user).second) users.push_back(s.user);
  std::mt19937 rng(static_cast<std::uint32_t>(seed));
  std::shuffle(users.begin(), users.end(), rng);
  size_t n_test = static_cast<size_t>(std::llround(test_fraction * static_cast<double>(users.size())));
  n_test = std::min(n_test, users.size());
  const std::unordered_set<int> test_users(users.begin(), users.begin() + n_test);
  std::pair<std::vector<Sample>, std::vector<Sample>> out;
  for (const Sample& s : samples)
    (test_users.contains(s.user) ? out.second : out.first).push_back(s);
  return out;
}

DatasetStats stats(const std::vector<Sample>& samples) {
  DatasetStats st;
  st.samples = static_cast<std::int64_t>(samples.size());
  std::unordered_set<int> users, goods, cats;
  for (const Sample& s : samples) {
    users.insert(s.user);
    goods.insert(s.target_item);
    for (size_t i = 0; i < s.history_items.size(); ++i)
      if (s.mask[i]) goods.insert(s.history_items[i]);
    if (!s.target_attrs.empty()) {
      cats.insert(s.target_attrs[0]);
      for (size_t i = 0; i < s.history_items.size(); ++i)
        if (s.mask[i]) cats.insert(s.history_attrs[0][i]);
    }
  }
  st.users = static_cast<std::int64_t>(users.size());
  st.goods = static_cast<std::int64_t>(goods.size());
  st.categories = static_cast<std::int64_t>(cats.size());
  return st;
}

// ---------------------------------------------------------------------------
// Sample files: tab-separated with a header naming the attribute dimensions;
// histories are written unpadded, pipe-joined.

namespace {

std::string join_pipe(std::span<const int> xs, std::span<const std::uint8_t> mask) {
  std::string out;
  for (size_t i = 0; i < xs.size(); ++i) {
    if (!mask[i]) continue;
    if (!out.empty()) out += "|";
    out += std::to_string(xs[i]);
  }
  return out;
}

std::vector<int> split_pipe(const std::string& s, int lineno) {
  std::vector<int> out;
  size_t pos = 0;
  while (pos <= s.size()) {
    const size_t next = s.find('|', pos);
    const std::string tok = s.substr(pos, next == std::string::npos ? std::string::npos : next - pos);
    if (tok.empty()) throw ParseError("samples: empty history entry at line " + std::to_string(lineno));
    out.push_back(std::stoi(tok));
    if (next == std::string::npos) break;
    pos = next + 1;
  }
  return out;
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  size_t pos = 0;
  for (;;) {
    const size_t next = line.find('\t', pos);
    out.push_back(line.substr(pos, next == std::string::npos ? std::string::npos : next - pos));
    if (next == std::string::npos) break;
    pos = next + 1;
  }
  return out;
}

}  // namespace

std::string serialize_samples(const std::vector<Sample>& samples,
                              const std::vector<std::string>& attr_keys) {
  if (attr_keys.empty()) throw ContractError("serialize_samples: need at least one attribute key");
  std::string out = "label\tuser\ttarget_item\ttarget_attr:" + attr_keys[0] +
                    "\thistory_items\thistory_attrs:" + attr_keys[0];
  for (size_t k = 1; k < attr_keys.size(); ++k)
    out += "\ttarget_attr:" + attr_keys[k] + "\thistory_attrs:" + attr_keys[k];
  out += "\n";
  for (const Sample& s : samples) {
    out += std::to_string(s.label) + "\t" + std::to_string(s.user) + "\t" +
           std::to_string(s.target_item) + "\t" + std::to_string(s.target_attrs[0]) + "\t" +
           join_pipe(s.history_items, s.mask) + "\t" + join_pipe(s.history_attrs[0], s.mask);
    for (size_t k = 1; k < attr_keys.size(); ++k)
      out += "\t" + std::to_string(s.target_attrs[k]) + "\t" + join_pipe(s.history_attrs[k], s.mask);
    out += "\n";
  }
  return out;
}

void save_samples(const std::filesystem::path& path, const std::vector<Sample>& samples,
                  const std::vector<std::string>& attr_keys) {
  write_file_atomic(path, serialize_samples(samples, attr_keys));
}

std::pair<std::vector<Sample>, std::vector<std::string>> load_samples(
    const std::filesystem::path& path, int t_max) {
  std::istringstream in(read_file(path));
  std::string line;
  if (!std::getline(in, line)) throw ParseError("samples: empty file " + path.string());
  const std::vector<std::string> header = split_tabs(line);
  if (header.size() < 6 || header.size() % 2 != 0)
    throw ParseError("samples: malformed header in " + path.string());
  std::vector<std::string> attr_keys;
  for (size_t c = 3; c < header.size(); c += 2) {
    if (header[c].rfind("target_attr:", 0) != 0)
      throw ParseError("samples: malformed header column \"" + header[c] + "\"");
    attr_keys.push_back(header[c].substr(12));
  }
  std::vector<Sample> samples;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::vector<std::string> cols = split_tabs(line);
    if (cols.size() != header.size())
      throw ParseError("samples: wrong column count at line " + std::to_string(lineno));
    Sample s;
    s.label = std::stoi(cols[0]);
    s.user = std::stoi(cols[1]);
    s.target_item = std::stoi(cols[2]);
    std::vector<int> items = split_pipe(cols[4], lineno);
    const int keep = std::min<int>(static_cast<int>(items.size()), t_max);
    s.history_items.assign(t_max, 0);
    s.mask.assign(t_max, 0);
    for (int i = 0; i < keep; ++i) {
      s.history_items[i] = items[items.size() - keep + i];
      s.mask[i] = 1;
    }
    s.target_attrs.resize(attr_keys.size());
    s.history_attrs.assign(attr_keys.size(), std::vector<int>(t_max, 0));
    for (size_t k = 0; k < attr_keys.size(); ++k) {
      const size_t tcol = k == 0 ? 3 : 4 + 2 * k;
      const size_t hcol = k == 0 ? 5 : 5 + 2 * k;
      s.target_attrs[k] = std::stoi(cols[tcol]);
      std::vector<int> attrs = split_pipe(cols[hcol], lineno);
      if (attrs.size() != items.size())
        throw ParseError("samples: history length mismatch at line " + std::to_string(lineno));
      for (int i = 0; i < keep; ++i) s.history_attrs[k][i] = attrs[attrs.size() - keep + i];
    }
    if (s.label != 0 && s.label != 1)
      throw ParseError("samples: label must be 0/1 at line " + std::to_string(lineno));
    samples.push_back(std::move(s));
  }
  return {std::move(samples), std::move(attr_keys)};
}

}  // namespace dhan
