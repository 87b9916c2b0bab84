#include "qarel/corpus.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>
#include <unordered_set>

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>
#include <json.hpp>

#include "qarel/error.hpp"
#include "qarel/rng.hpp"

namespace qarel {

namespace {

constexpr std::array<std::string_view, 5> kPartyNames = {"BQ", "CPC", "LPC", "NDP", "Other"};
constexpr std::array<std::string_view, 3> kRoleNames = {"Opposition", "GovernmentBackbench",
                                                        "Independent"};
constexpr std::array<std::string_view, 3> kLabelNames = {"FullReply", "IntermediateReply",
                                                         "NonReply"};

template <typename Enum, std::size_t N>
std::optional<Enum> lookup_name(const std::array<std::string_view, N>& names, std::string_view s) {
  for (std::size_t i = 0; i < N; ++i) {
    if (names[i] == s) return static_cast<Enum>(i);
  }
  return std::nullopt;
}

bool is_blank(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f';
  });
}

void check_unique(std::unordered_set<std::string>& seen, const std::string& id) {
  if (!seen.insert(id).second) throw DataError("duplicate exchange id \"" + id + "\"");
}

// ---------------------------------------------------------------------------
// ExchangeLines

using ordered_json = nlohmann::ordered_json;

const std::set<std::string, std::less<>> kLineKeys = {"id",    "question",    "answer", "party",
                                                      "role",  "legislature", "date",   "label"};

const ordered_json& require_key(const ordered_json& obj, const char* key, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end()) throw DataError(where + ": missing field \"" + key + "\"");
  return *it;
}

std::string require_string(const ordered_json& obj, const char* key, const std::string& where) {
  const auto& v = require_key(obj, key, where);
  if (!v.is_string()) throw DataError(where + ": field \"" + key + "\" must be a string");
  return v.get<std::string>();
}

Exchange exchange_from_json(const ordered_json& obj, const std::string& where) {
  if (!obj.is_object()) throw DataError(where + ": record is not an object");
  for (const auto& item : obj.items()) {
    if (!kLineKeys.contains(item.key())) {
      throw DataError(where + ": unknown field \"" + item.key() + "\"");
    }
  }

  Exchange e;
  e.id = require_string(obj, "id", where);
  e.question_text = require_string(obj, "question", where);
  e.answer_text = require_string(obj, "answer", where);

  const auto party = require_string(obj, "party", where);
  if (auto p = parse_party(party)) {
    e.asker_party = *p;
  } else {
    throw DataError(where + ": field \"party\" has unknown value \"" + party + "\"");
  }
  const auto role = require_string(obj, "role", where);
  if (auto r = parse_role(role)) {
    e.asker_role = *r;
  } else {
    throw DataError(where + ": field \"role\" has unknown value \"" + role + "\"");
  }

  const auto& leg = require_key(obj, "legislature", where);
  if (!leg.is_number_integer()) {
    throw DataError(where + ": field \"legislature\" must be an integer");
  }
  const auto leg_value = leg.get<std::int64_t>();
  if (leg_value < 1 || leg_value > std::numeric_limits<int>::max()) {
    throw DataError(where + ": field \"legislature\" must be a positive integer");
  }
  e.legislature = static_cast<int>(leg_value);

  const auto date = require_string(obj, "date", where);
  if (auto d = parse_iso_date(date)) {
    e.date = *d;
  } else {
    throw DataError(where + ": field \"date\" is not a valid YYYY-MM-DD date: \"" + date + "\"");
  }

  if (auto it = obj.find("label"); it != obj.end()) {
    if (!it->is_string()) throw DataError(where + ": field \"label\" must be a string");
    const auto label = it->get<std::string>();
    if (auto l = parse_label(label)) {
      e.label = *l;
    } else {
      throw DataError(where + ": field \"label\" has unknown value \"" + label + "\"");
    }
  }

  validate_exchange(e, where);
  return e;
}

std::vector<Exchange> parse_lines(std::istream& source) {
  std::vector<Exchange> out;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(source, line)) {
    ++line_no;
    const std::string where = "line " + std::to_string(line_no);
    if (!line.empty() && line.back() == '\r') {
      throw DataError(where + ": CRLF line ending (records must be LF-terminated)");
    }
    if (line.empty()) continue;
    ordered_json obj;
    try {
      obj = ordered_json::parse(line);
    } catch (const nlohmann::json::parse_error& err) {
      throw DataError(where + ": malformed record: " + err.what());
    }
    auto e = exchange_from_json(obj, where);
    check_unique(seen, e.id);
    out.push_back(std::move(e));
  }
  if (source.bad()) throw DataError("read failure while parsing exchanges");
  return out;
}

// ---------------------------------------------------------------------------
// HansardLike

namespace pt = boost::property_tree;

std::string required_attr(const pt::ptree& node, const char* attr, const std::string& where,
                          const char* element) {
  auto attrs = node.get_child_optional("<xmlattr>");
  if (attrs) {
    if (auto v = attrs->get_optional<std::string>(attr)) return *v;
  }
  throw DataError(where + ": <" + element + "> is missing attribute \"" + attr + "\"");
}

void reject_unknown_attrs(const pt::ptree& node, std::initializer_list<std::string_view> allowed,
                          const std::string& where, const char* element) {
  auto attrs = node.get_child_optional("<xmlattr>");
  if (!attrs) return;
  for (const auto& [name, value] : *attrs) {
    if (std::find(allowed.begin(), allowed.end(), name) == allowed.end()) {
      throw DataError(where + ": <" + element + "> has unknown attribute \"" + name + "\"");
    }
  }
}

std::vector<Exchange> parse_hansard(std::istream& source) {
  pt::ptree doc;
  try {
    pt::read_xml(source, doc);
  } catch (const pt::xml_parser_error& err) {
    throw DataError("line " + std::to_string(err.line()) + ": malformed transcript: " +
                    err.message());
  }

  auto root = doc.get_child_optional("transcript");
  if (!root) throw DataError("transcript: missing <transcript> root element");

  std::vector<Exchange> out;
  std::unordered_set<std::string> seen;
  std::size_t record = 0;
  for (const auto& [tag, node] : *root) {
    if (tag == "<xmlcomment>" || tag == "<xmlattr>") continue;
    if (tag != "exchange") throw DataError("transcript: unexpected element <" + tag + ">");
    ++record;
    const std::string where = "record " + std::to_string(record);

    reject_unknown_attrs(node, {"id", "label"}, where, "exchange");
    Exchange e;
    e.id = required_attr(node, "id", where, "exchange");
    if (auto attrs = node.get_child_optional("<xmlattr>")) {
      if (auto label = attrs->get_optional<std::string>("label")) {
        auto l = parse_label(*label);
        if (!l) throw DataError(where + ": field \"label\" has unknown value \"" + *label + "\"");
        e.label = *l;
      }
    }

    bool have_question = false;
    bool have_answer = false;
    for (const auto& [child_tag, child] : node) {
      if (child_tag == "<xmlattr>" || child_tag == "<xmlcomment>") continue;
      if (child_tag == "question") {
        if (have_question) throw DataError(where + ": more than one <question>");
        have_question = true;
        reject_unknown_attrs(child, {"speaker-party", "speaker-role", "legislature", "date"}, where,
                             "question");
        e.question_text = child.data();
        const auto party = required_attr(child, "speaker-party", where, "question");
        auto p = parse_party(party);
        if (!p) throw DataError(where + ": field \"party\" has unknown value \"" + party + "\"");
        e.asker_party = *p;
        const auto role = required_attr(child, "speaker-role", where, "question");
        auto r = parse_role(role);
        if (!r) throw DataError(where + ": field \"role\" has unknown value \"" + role + "\"");
        e.asker_role = *r;
        const auto leg = required_attr(child, "legislature", where, "question");
        std::size_t used = 0;
        long value = 0;
        try {
          value = std::stol(leg, &used);
        } catch (const std::exception&) {
          used = 0;
        }
        if (used != leg.size() || leg.empty() || value < 1 ||
            value > std::numeric_limits<int>::max()) {
          throw DataError(where + ": field \"legislature\" must be a positive integer");
        }
        e.legislature = static_cast<int>(value);
        const auto date = required_attr(child, "date", where, "question");
        auto d = parse_iso_date(date);
        if (!d) {
          throw DataError(where + ": field \"date\" is not a valid YYYY-MM-DD date: \"" + date +
                          "\"");
        }
        e.date = *d;
      } else if (child_tag == "answer") {
        if (have_answer) throw DataError(where + ": more than one <answer>");
        have_answer = true;
        reject_unknown_attrs(child, {}, where, "answer");
        e.answer_text = child.data();
      } else {
        throw DataError(where + ": unexpected element <" + child_tag + "> in <exchange>");
      }
    }
    if (!have_question) throw DataError(where + ": field \"question_text\" missing (<question>)");
    if (!have_answer) throw DataError(where + ": field \"answer_text\" missing (<answer>)");

    validate_exchange(e, where);
    check_unique(seen, e.id);
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace

std::string_view to_string(Party p) { return kPartyNames.at(static_cast<std::size_t>(p)); }
std::string_view to_string(Role r) { return kRoleNames.at(static_cast<std::size_t>(r)); }
std::string_view to_string(ReplyLabel l) { return kLabelNames.at(static_cast<std::size_t>(l)); }

std::optional<Party> parse_party(std::string_view s) { return lookup_name<Party>(kPartyNames, s); }
std::optional<Role> parse_role(std::string_view s) { return lookup_name<Role>(kRoleNames, s); }
std::optional<ReplyLabel> parse_label(std::string_view s) {
  return lookup_name<ReplyLabel>(kLabelNames, s);
}

std::optional<std::chrono::year_month_day> parse_iso_date(std::string_view s) {
  if (s.size() != 10 || s[4] != '-' || s[7] != '-') return std::nullopt;
  auto digits = [&](std::size_t pos, std::size_t len) -> std::optional<int> {
    int v = 0;
    for (std::size_t i = pos; i < pos + len; ++i) {
      if (s[i] < '0' || s[i] > '9') return std::nullopt;
      v = v * 10 + (s[i] - '0');
    }
    return v;
  };
  auto y = digits(0, 4);
  auto m = digits(5, 2);
  auto d = digits(8, 2);
  if (!y || !m || !d) return std::nullopt;
  std::chrono::year_month_day ymd{std::chrono::year{*y},
                                  std::chrono::month{static_cast<unsigned>(*m)},
                                  std::chrono::day{static_cast<unsigned>(*d)}};
  if (!ymd.ok()) return std::nullopt;
  return ymd;
}

std::string format_iso_date(std::chrono::year_month_day d) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(d.year()),
                static_cast<unsigned>(d.month()), static_cast<unsigned>(d.day()));
  return buf;
}

void validate_exchange(const Exchange& e, std::string_view where) {
  const std::string prefix(where);
  if (e.id.empty()) throw DataError(prefix + ": field \"id\" is empty");
  if (is_blank(e.question_text)) throw DataError(prefix + ": field \"question_text\" is empty");
  if (is_blank(e.answer_text)) throw DataError(prefix + ": field \"answer_text\" is empty");
  if (e.legislature < 1) throw DataError(prefix + ": field \"legislature\" must be positive");
  if (!e.date.ok()) throw DataError(prefix + ": field \"date\" is not a valid calendar date");
}

std::optional<TranscriptFormat> parse_format(std::string_view s) {
  if (s == "lines") return TranscriptFormat::ExchangeLines;
  if (s == "hansard") return TranscriptFormat::HansardLike;
  return std::nullopt;
}

std::vector<Exchange> parse_transcripts(std::istream& source, TranscriptFormat format) {
  switch (format) {
    case TranscriptFormat::ExchangeLines:
      return parse_lines(source);
    case TranscriptFormat::HansardLike:
      return parse_hansard(source);
  }
  throw ArgumentError("unknown transcript format");
}

void save_corpus(const std::vector<Exchange>& exchanges, std::ostream& sink) {
  std::unordered_set<std::string> seen;
  std::size_t index = 0;
  for (const auto& e : exchanges) {
    ++index;
    validate_exchange(e, "exchange " + std::to_string(index));
    check_unique(seen, e.id);
    ordered_json obj;
    obj["id"] = e.id;
    obj["question"] = e.question_text;
    obj["answer"] = e.answer_text;
    obj["party"] = std::string(to_string(e.asker_party));
    obj["role"] = std::string(to_string(e.asker_role));
    obj["legislature"] = e.legislature;
    obj["date"] = format_iso_date(e.date);
    if (e.label) obj["label"] = std::string(to_string(*e.label));
    try {
      sink << obj.dump() << '\n';
    } catch (const nlohmann::json::type_error& err) {
      throw DataError("exchange \"" + e.id + "\": " + err.what());
    }
  }
  if (!sink) throw DataError("write failure while saving corpus");
}

std::vector<Exchange> read_corpus_file(const std::filesystem::path& path,
                                       TranscriptFormat format) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return parse_transcripts(in, format);
  } catch (const DataError& err) {
    throw DataError(path.string() + ": " + err.what());
  }
}

void write_corpus_file(const std::vector<Exchange>& exchanges, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  save_corpus(exchanges, out);
  out.flush();
  if (!out) throw DataError("write failure on " + path.string());
}

CorpusSplit split_corpus(const std::vector<Exchange>& exchanges, double train_frac,
                         double val_frac, std::uint64_t seed) {
  if (!(train_frac >= 0.0) || !(val_frac >= 0.0) || !(train_frac + val_frac > 0.0) ||
      !(train_frac + val_frac < 1.0)) {
    throw ArgumentError("split fractions must be non-negative with 0 < train + val < 1");
  }
  const std::size_t n = exchanges.size();
  // The epsilon absorbs representation error such as 0.29 * 100 = 28.999...
  auto floor_count = [n](double frac) {
    return static_cast<std::size_t>(std::floor(frac * static_cast<double>(n) + 1e-9));
  };
  const std::size_t n_train = floor_count(train_frac);
  const std::size_t n_val = std::min(floor_count(val_frac), n - n_train);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(std::span(order));

  // 0 = train, 1 = validation, 2 = inference
  std::vector<int> bucket(n, 2);
  for (std::size_t i = 0; i < n_train; ++i) bucket[order[i]] = 0;
  for (std::size_t i = n_train; i < n_train + n_val; ++i) bucket[order[i]] = 1;

  CorpusSplit split;
  split.seed = seed;
  split.train.reserve(n_train);
  split.validation.reserve(n_val);
  split.inference.reserve(n - n_train - n_val);
  for (std::size_t i = 0; i < n; ++i) {
    switch (bucket[i]) {
      case 0: split.train.push_back(exchanges[i]); break;
      case 1: split.validation.push_back(exchanges[i]); break;
      default: split.inference.push_back(exchanges[i]); break;
    }
  }
  return split;
}

bool ExchangeFilter::matches(const Exchange& e) const {
  if (party && e.asker_party != *party) return false;
  if (role && e.asker_role != *role) return false;
  if (legislature && e.legislature != *legislature) return false;
  if (label && e.label != label) return false;
  return true;
}

std::vector<Exchange> filter_exchanges(const std::vector<Exchange>& exchanges,
                                       const std::function<bool(const Exchange&)>& predicate) {
  std::vector<Exchange> out;
  std::copy_if(exchanges.begin(), exchanges.end(), std::back_inserter(out), predicate);
  return out;
}

std::vector<Exchange> filter_exchanges(const std::vector<Exchange>& exchanges,
                                       const ExchangeFilter& filter) {
  return filter_exchanges(exchanges, [&](const Exchange& e) { return filter.matches(e); });
}

}  // namespace qarel
