#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dta/error.hpp"

namespace dta {

// One (drug, target, affinity) observation; a cell of the interaction
// matrix. Construction validates the invariants.
struct AffinityRecord {
  std::string drug_id;
  std::string smiles;
  std::string target_id;
  std::string sequence;
  double affinity = 0.0;

  AffinityRecord() = default;
  AffinityRecord(std::string drug_id, std::string smiles,
                 std::string target_id, std::string sequence, double affinity);
};

enum class UnseenTokenPolicy { kReject, kMapToUnknown };

// Character-level token map. Real tokens occupy indices 1..V; 0 is the
// padding index and one extra slot past V serves unknown characters under
// the map-to-unknown policy.
class Vocabulary {
 public:
  Vocabulary() = default;

  static Vocabulary from_corpus(const std::vector<std::string>& texts,
                                UnseenTokenPolicy policy);
  static Vocabulary from_tokens(const std::string& ordered_tokens,
                                UnseenTokenPolicy policy);

  int encode_char(char c, std::size_t position) const;
  std::vector<int> encode(const std::string& text) const;
  char decode(int index) const;

  int size() const { return static_cast<int>(tokens_.size()); }
  int padding_index() const { return 0; }
  int unknown_index() const { return size() + 1; }
  int embedding_rows() const { return size() + 2; }
  const std::string& tokens() const { return tokens_; }
  UnseenTokenPolicy policy() const { return policy_; }

 private:
  std::string tokens_;  // sorted; tokens_[i] maps to index i+1
  std::vector<int> index_of_ = std::vector<int>(256, 0);
  UnseenTokenPolicy policy_ = UnseenTokenPolicy::kMapToUnknown;
};

// Fixed-length token views of one record.
struct EncodedPair {
  std::vector<int> drug_tokens;    // length L_d
  std::vector<int> target_tokens;  // length L_t
  double affinity = 0.0;
};

EncodedPair encode(const AffinityRecord& record, const Vocabulary& drug_vocab,
                   const Vocabulary& target_vocab, int max_drug_len,
                   int max_target_len);

// ---- Loading ----

struct ColumnMap {
  std::string drug_id = "drug_id";
  std::string smiles = "smiles";
  std::string target_id = "target_id";
  std::string sequence = "sequence";
  std::string affinity = "affinity";
};

struct LoadOptions {
  ColumnMap columns;
  bool fail_fast = true;  // otherwise skip bad rows and report them
};

struct RowError {
  long row;  // 1-based data row
  std::string message;
};

struct LoadResult {
  std::vector<AffinityRecord> records;
  std::vector<RowError> skipped;
};

// Delimiter-separated text with a mandatory header row; comma or tab,
// auto-detected from the header. Extra columns are ignored.
LoadResult load_dataset(const std::string& path,
                        const LoadOptions& options = {});

// ---- Transforms ----

// Kd in nanomolar -> pKd = -log10(kd / 1e9).
double pkd_transform(double kd_nanomolar);

// ---- Splitting ----

struct SplitBundle {
  std::vector<AffinityRecord> train;
  std::vector<AffinityRecord> val;
  std::vector<AffinityRecord> s2_unseen_drug;
  std::vector<AffinityRecord> s3_unseen_target;
  std::vector<AffinityRecord> s4_unseen_pair;
  std::uint64_t seed = 0;
  double rho_drug = 0.0;
  double rho_target = 0.0;
  std::vector<std::string> unseen_drugs;
  std::vector<std::string> unseen_targets;
  std::size_t drug_count = 0;    // active drugs in the input
  std::size_t target_count = 0;  // active targets in the input
  std::vector<std::string> warnings;
};

// Entity-level cold-start partition: floor(rho * n) unseen drugs/targets
// drawn uniformly, seen x seen interactions to train, every other
// interaction to val with probability 0.5 and otherwise to its scenario
// bucket. Deterministic for a fixed seed; interactions are visited in
// (drug_id, target_id) order.
SplitBundle cold_start_split(const std::vector<AffinityRecord>& records,
                             double rho, std::uint64_t seed);
SplitBundle cold_start_split(const std::vector<AffinityRecord>& records,
                             double rho_drug, double rho_target,
                             std::uint64_t seed);

struct RandomSplit {
  std::vector<AffinityRecord> train;
  std::vector<AffinityRecord> val;
  std::vector<AffinityRecord> test;
};

// Shuffled partition with largest-remainder sizing; each subset size lands
// within 1 of fraction * N.
RandomSplit random_split(const std::vector<AffinityRecord>& records,
                         double train_fraction, double val_fraction,
                         double test_fraction, std::uint64_t seed);

// ---- Manifests ----

// Writes records in the canonical comma-separated layout plus a
// split_label column.
void write_manifest(const std::string& path,
                    const std::vector<AffinityRecord>& records,
                    const std::string& split_label);

// One manifest per subset plus a sidecar metadata JSON recording seed,
// rho, entity counts and subset sizes.
void write_split_bundle(const SplitBundle& bundle, const std::string& out_dir);
void write_random_split(const RandomSplit& split, std::uint64_t seed,
                        const std::string& out_dir);

}  // namespace dta
