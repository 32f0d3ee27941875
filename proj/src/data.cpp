#include "dta/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "dta/rng.hpp"

namespace dta {

AffinityRecord::AffinityRecord(std::string drug_id_in, std::string smiles_in,
                               std::string target_id_in,
                               std::string sequence_in, double affinity_in)
    : drug_id(std::move(drug_id_in)),
      smiles(std::move(smiles_in)),
      target_id(std::move(target_id_in)),
      sequence(std::move(sequence_in)),
      affinity(affinity_in) {
  if (smiles.empty()) throw DataError("record " + drug_id + ": empty SMILES");
  if (sequence.empty())
    throw DataError("record " + target_id + ": empty sequence");
  if (!std::isfinite(affinity))
    throw DataError("record (" + drug_id + ", " + target_id +
                    "): non-finite affinity");
}

Vocabulary Vocabulary::from_corpus(const std::vector<std::string>& texts,
                                   UnseenTokenPolicy policy) {
  std::set<char> seen;
  for (const std::string& t : texts) seen.insert(t.begin(), t.end());
  std::string ordered(seen.begin(), seen.end());
  return from_tokens(ordered, policy);
}

Vocabulary Vocabulary::from_tokens(const std::string& ordered_tokens,
                                   UnseenTokenPolicy policy) {
  Vocabulary v;
  v.policy_ = policy;
  v.tokens_ = ordered_tokens;
  for (std::size_t i = 0; i < v.tokens_.size(); ++i) {
    unsigned char c = static_cast<unsigned char>(v.tokens_[i]);
    if (v.index_of_[c] != 0)
      throw ParameterError(std::string("duplicate token '") + v.tokens_[i] +
                           "' in vocabulary");
    v.index_of_[c] = static_cast<int>(i) + 1;
  }
  return v;
}

int Vocabulary::encode_char(char c, std::size_t position) const {
  const int idx = index_of_[static_cast<unsigned char>(c)];
  if (idx != 0) return idx;
  if (policy_ == UnseenTokenPolicy::kMapToUnknown) return unknown_index();
  throw DataError(std::string("unseen token '") + c + "' at position " +
                  std::to_string(position));
}

std::vector<int> Vocabulary::encode(const std::string& text) const {
  std::vector<int> out;
  out.reserve(text.size());
  for (std::size_t i = 0; i < text.size(); ++i)
    out.push_back(encode_char(text[i], i));
  return out;
}

char Vocabulary::decode(int index) const {
  if (index < 1 || index > size())
    throw ParameterError("decode: index " + std::to_string(index) +
                         " is not a real token");
  return tokens_[index - 1];
}

EncodedPair encode(const AffinityRecord& record, const Vocabulary& drug_vocab,
                   const Vocabulary& target_vocab, int max_drug_len,
                   int max_target_len) {
  if (max_drug_len < 1 || max_target_len < 1)
    throw ParameterError("encode: maximum lengths must be positive");
  EncodedPair pair;
  pair.affinity = record.affinity;
  pair.drug_tokens.assign(max_drug_len, 0);
  pair.target_tokens.assign(max_target_len, 0);
  const std::size_t nd =
      std::min<std::size_t>(record.smiles.size(), max_drug_len);
  for (std::size_t i = 0; i < nd; ++i)
    pair.drug_tokens[i] = drug_vocab.encode_char(record.smiles[i], i);
  const std::size_t nt =
      std::min<std::size_t>(record.sequence.size(), max_target_len);
  for (std::size_t i = 0; i < nt; ++i)
    pair.target_tokens[i] = target_vocab.encode_char(record.sequence[i], i);
  return pair;
}

namespace {

std::vector<std::string> split_line(const std::string& line, char delim) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, delim)) fields.push_back(field);
  if (!line.empty() && line.back() == delim) fields.push_back("");
  return fields;
}

std::string strip_cr(std::string s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
  return s;
}

}  // namespace

LoadResult load_dataset(const std::string& path, const LoadOptions& options) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset file: " + path);

  std::string header_line;
  if (!std::getline(in, header_line))
    throw DataError("dataset file is empty (header row is mandatory): " +
                    path);
  header_line = strip_cr(header_line);
  const char delim =
      header_line.find('\t') != std::string::npos ? '\t' : ',';
  const std::vector<std::string> header = split_line(header_line, delim);

  auto column = [&](const std::string& name) {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<long>(i);
    throw DataError("missing column '" + name + "' in " + path);
  };
  const long c_drug = column(options.columns.drug_id);
  const long c_smiles = column(options.columns.smiles);
  const long c_target = column(options.columns.target_id);
  const long c_seq = column(options.columns.sequence);
  const long c_aff = column(options.columns.affinity);
  const long needed =
      std::max({c_drug, c_smiles, c_target, c_seq, c_aff});

  LoadResult result;
  std::string line;
  long row = 0;
  while (std::getline(in, line)) {
    line = strip_cr(line);
    ++row;
    if (line.empty()) continue;
    auto fail = [&](const std::string& msg) {
      const std::string full = "row " + std::to_string(row) + ": " + msg;
      if (options.fail_fast) throw DataError(full, row);
      result.skipped.push_back({row, full});
    };
    const std::vector<std::string> fields = split_line(line, delim);
    if (static_cast<long>(fields.size()) <= needed) {
      fail("expected at least " + std::to_string(needed + 1) +
           " columns, got " + std::to_string(fields.size()));
      continue;
    }
    double affinity;
    try {
      std::size_t used = 0;
      affinity = std::stod(fields[c_aff], &used);
      if (used != fields[c_aff].size())
        throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
      fail("affinity '" + fields[c_aff] + "' is not numeric");
      continue;
    }
    try {
      result.records.emplace_back(fields[c_drug], fields[c_smiles],
                                  fields[c_target], fields[c_seq], affinity);
    } catch (const DataError& e) {
      fail(e.what());
    }
  }
  return result;
}

double pkd_transform(double kd_nanomolar) {
  if (!(kd_nanomolar > 0.0))
    throw ParameterError("pkd_transform: Kd must be positive, got " +
                         std::to_string(kd_nanomolar));
  return -std::log10(kd_nanomolar / 1e9);
}

namespace {

// Fisher-Yates with explicit draws; std::shuffle's sequence is not pinned
// by the standard.
template <typename T>
void deterministic_shuffle(std::vector<T>& items, std::mt19937_64& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const std::size_t j = rng() % i;
    std::swap(items[i - 1], items[j]);
  }
}

std::vector<std::string> sorted_unique_ids(
    const std::vector<AffinityRecord>& records, bool drugs) {
  std::set<std::string> ids;
  for (const auto& r : records) ids.insert(drugs ? r.drug_id : r.target_id);
  return {ids.begin(), ids.end()};
}

}  // namespace

SplitBundle cold_start_split(const std::vector<AffinityRecord>& records,
                             double rho, std::uint64_t seed) {
  return cold_start_split(records, rho, rho, seed);
}

SplitBundle cold_start_split(const std::vector<AffinityRecord>& records,
                             double rho_drug, double rho_target,
                             std::uint64_t seed) {
  if (records.empty()) throw ParameterError("cold_start_split: no records");
  if (!(rho_drug > 0.0 && rho_drug < 1.0) ||
      !(rho_target > 0.0 && rho_target < 1.0))
    throw ParameterError("cold_start_split: rho must lie in (0, 1)");

  SplitBundle bundle;
  bundle.seed = seed;
  bundle.rho_drug = rho_drug;
  bundle.rho_target = rho_target;

  RngPool pool(seed);
  std::mt19937_64& rng = pool.stream(RngStream::kSplit);

  std::vector<std::string> drugs = sorted_unique_ids(records, true);
  std::vector<std::string> targets = sorted_unique_ids(records, false);
  bundle.drug_count = drugs.size();
  bundle.target_count = targets.size();

  const std::size_t k_drug =
      static_cast<std::size_t>(rho_drug * static_cast<double>(drugs.size()));
  const std::size_t k_target = static_cast<std::size_t>(
      rho_target * static_cast<double>(targets.size()));
  if (k_drug == 0)
    bundle.warnings.push_back("rho_drug yields zero unseen drugs");
  if (k_target == 0)
    bundle.warnings.push_back("rho_target yields zero unseen targets");

  deterministic_shuffle(drugs, rng);
  deterministic_shuffle(targets, rng);
  std::unordered_set<std::string> unseen_drugs(drugs.begin(),
                                               drugs.begin() + k_drug);
  std::unordered_set<std::string> unseen_targets(targets.begin(),
                                                 targets.begin() + k_target);
  bundle.unseen_drugs.assign(drugs.begin(), drugs.begin() + k_drug);
  bundle.unseen_targets.assign(targets.begin(), targets.begin() + k_target);
  std::sort(bundle.unseen_drugs.begin(), bundle.unseen_drugs.end());
  std::sort(bundle.unseen_targets.begin(), bundle.unseen_targets.end());

  // Coin flips are consumed in (drug_id, target_id) order so the bundle is
  // a pure function of (records, rho, seed).
  std::vector<const AffinityRecord*> ordered;
  ordered.reserve(records.size());
  for (const auto& r : records) ordered.push_back(&r);
  std::stable_sort(ordered.begin(), ordered.end(),
                   [](const AffinityRecord* a, const AffinityRecord* b) {
                     if (a->drug_id != b->drug_id)
                       return a->drug_id < b->drug_id;
                     return a->target_id < b->target_id;
                   });

  for (const AffinityRecord* r : ordered) {
    const bool drug_unseen = unseen_drugs.count(r->drug_id) > 0;
    const bool target_unseen = unseen_targets.count(r->target_id) > 0;
    if (!drug_unseen && !target_unseen) {
      bundle.train.push_back(*r);
      continue;
    }
    const bool to_val = uniform01(rng) < 0.5;
    if (to_val) {
      bundle.val.push_back(*r);
    } else if (drug_unseen && !target_unseen) {
      bundle.s2_unseen_drug.push_back(*r);
    } else if (!drug_unseen && target_unseen) {
      bundle.s3_unseen_target.push_back(*r);
    } else {
      bundle.s4_unseen_pair.push_back(*r);
    }
  }
  return bundle;
}

RandomSplit random_split(const std::vector<AffinityRecord>& records,
                         double train_fraction, double val_fraction,
                         double test_fraction, std::uint64_t seed) {
  if (records.empty()) throw ParameterError("random_split: no records");
  const double fractions[3] = {train_fraction, val_fraction, test_fraction};
  double sum = 0.0;
  for (double f : fractions) {
    if (!(f > 0.0)) throw ParameterError("random_split: fractions must be positive");
    sum += f;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw ParameterError("random_split: fractions sum to " +
                         std::to_string(sum) + ", expected 1");

  const std::size_t n = records.size();
  // Largest-remainder sizing keeps every subset within 1 of fraction * N.
  std::size_t sizes[3];
  double remainders[3];
  std::size_t assigned = 0;
  for (int i = 0; i < 3; ++i) {
    const double target = fractions[i] * static_cast<double>(n);
    sizes[i] = static_cast<std::size_t>(target);
    remainders[i] = target - static_cast<double>(sizes[i]);
    assigned += sizes[i];
  }
  while (assigned < n) {
    int best = 0;
    for (int i = 1; i < 3; ++i)
      if (remainders[i] > remainders[best]) best = i;
    ++sizes[best];
    remainders[best] = -1.0;
    ++assigned;
  }

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  RngPool pool(seed);
  deterministic_shuffle(order, pool.stream(RngStream::kSplit));

  RandomSplit split;
  std::size_t cursor = 0;
  for (std::size_t i = 0; i < sizes[0]; ++i)
    split.train.push_back(records[order[cursor++]]);
  for (std::size_t i = 0; i < sizes[1]; ++i)
    split.val.push_back(records[order[cursor++]]);
  for (std::size_t i = 0; i < sizes[2]; ++i)
    split.test.push_back(records[order[cursor++]]);
  return split;
}

void write_manifest(const std::string& path,
                    const std::vector<AffinityRecord>& records,
                    const std::string& split_label) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write manifest: " + path);
  out.precision(17);  // lossless double round-trip
  out << "drug_id,smiles,target_id,sequence,affinity,split_label\n";
  for (const auto& r : records)
    out << r.drug_id << ',' << r.smiles << ',' << r.target_id << ','
        << r.sequence << ',' << r.affinity << ',' << split_label << '\n';
}

namespace {

void write_metadata(const nlohmann::json& meta, const std::string& out_dir) {
  std::ofstream out(out_dir + "/split_meta.json");
  if (!out) throw DataError("cannot write split metadata in " + out_dir);
  out << meta.dump(2) << '\n';
}

}  // namespace

void write_split_bundle(const SplitBundle& bundle,
                        const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  write_manifest(out_dir + "/train.csv", bundle.train, "train");
  write_manifest(out_dir + "/val.csv", bundle.val, "val");
  write_manifest(out_dir + "/s2_unseen_drug.csv", bundle.s2_unseen_drug,
                 "s2_unseen_drug");
  write_manifest(out_dir + "/s3_unseen_target.csv", bundle.s3_unseen_target,
                 "s3_unseen_target");
  write_manifest(out_dir + "/s4_unseen_pair.csv", bundle.s4_unseen_pair,
                 "s4_unseen_pair");
  nlohmann::json meta{
      {"mode", "cold"},
      {"seed", bundle.seed},
      {"rho_drug", bundle.rho_drug},
      {"rho_target", bundle.rho_target},
      {"drugs", bundle.drug_count},
      {"targets", bundle.target_count},
      {"unseen_drugs", bundle.unseen_drugs.size()},
      {"unseen_targets", bundle.unseen_targets.size()},
      {"sizes",
       {{"train", bundle.train.size()},
        {"val", bundle.val.size()},
        {"s2_unseen_drug", bundle.s2_unseen_drug.size()},
        {"s3_unseen_target", bundle.s3_unseen_target.size()},
        {"s4_unseen_pair", bundle.s4_unseen_pair.size()}}},
      {"warnings", bundle.warnings}};
  write_metadata(meta, out_dir);
}

void write_random_split(const RandomSplit& split, std::uint64_t seed,
                        const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  write_manifest(out_dir + "/train.csv", split.train, "train");
  write_manifest(out_dir + "/val.csv", split.val, "val");
  write_manifest(out_dir + "/test.csv", split.test, "test");
  nlohmann::json meta{{"mode", "random"},
                      {"seed", seed},
                      {"sizes",
                       {{"train", split.train.size()},
                        {"val", split.val.size()},
                        {"test", split.test.size()}}}};
  write_metadata(meta, out_dir);
}

}  // namespace dta
