#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cnflow/graph.hpp"
#include "cnflow/scm.hpp"

namespace cnflow {

enum class ColumnKind { Continuous, Discrete };

struct ColumnSchema {
  std::string name;
  ColumnKind kind = ColumnKind::Continuous;
  int categories = 0;  // >= 2 when discrete
};

// A generated observational dataset with its provenance.
struct GeneratedData {
  std::string scm_name;
  std::uint64_t seed = 0;
  Eigen::MatrixXd train, val, test;
};

struct SplitSizes {
  int train = 20000;
  int val = 2500;
  int test = 2500;
};

// Samples the three splits from disjoint seed streams. Deterministic:
// identical (scm, sizes, seed) give identical matrices.
GeneratedData generate_dataset(const ScmSpec& scm, const SplitSizes& sizes = {},
                               std::uint64_t seed = 0);

// Writes train.csv / val.csv / test.csv (header x1..xd) plus metadata.json
// into `dir`, creating it if needed. Writes are atomic and byte-reproducible.
void write_dataset(const GeneratedData& data, const std::string& dir);

// Delimited matrix I/O used by dataset files and CLI artifacts. The header
// row is required on read; FormatError on malformed content.
void write_matrix_csv(const std::string& path,
                      const std::vector<std::string>& header,
                      const Eigen::MatrixXd& values);
Eigen::MatrixXd read_matrix_csv(const std::string& path,
                                std::vector<std::string>* header = nullptr);

// Uniform dequantization x = c + eps, eps ~ U(0,1): floor recovers the code.
Eigen::VectorXd dequantize(const Eigen::VectorXi& column, std::uint64_t seed);
// Elementwise floor.
Eigen::VectorXi requantize(const Eigen::VectorXd& column);

// One fold of a k-fold fractional split over row indices 0..rows-1.
struct SplitSpec {
  double train_fraction = 0.8;
  double val_fraction = 0.1;
  double test_fraction = 0.1;
  int fold = 0;
  int num_folds = 5;
  std::uint64_t seed = 0;

  void validate() const;  // ConfigError on violated invariants
};

struct SplitIndices {
  std::vector<int> train, val, test;
};

// Deterministic permutation + rotation by fold; each fold is a partition of
// all row indices with the requested fractions.
SplitIndices kfold_split(int rows, const SplitSpec& spec);

// German Credit ingestion: the seven discrete features of the fairness
// study plus the binary label, the partially known causal structure over
// them, and a plain-text manifest recording the raw-column mapping.
struct GermanData {
  std::vector<ColumnSchema> schema;  // 7 discrete features
  Eigen::MatrixXi raw_codes;         // n x 7 non-negative category codes
  Eigen::MatrixXd values;            // dequantized codes
  Eigen::VectorXi labels;            // 1 = good credit risk, 0 = bad
  std::string label_name = "credit risk";
  PartialGraph partial;              // known edges + unknown pairs
  std::string checksum;              // FNV-1a of the raw bytes, hex
  std::string manifest;              // feature -> raw column, coding map
};

// Parses a file in the classic space-separated 21-field format. When
// `expected_checksum` is non-empty it is compared against the raw bytes
// (ChecksumError on mismatch). Rows with missing fields raise
// MissingColumnError. Dequantization uses `seed`.
GermanData load_german(const std::string& path,
                       const std::string& expected_checksum = "",
                       std::uint64_t seed = 0);

// The partially known structure over {sex, age, credit amount, repayment
// history, checking account, savings, housing}: sex and age are known causes
// of every member of the credit and housing blocks; relations inside each
// block are unknown.
PartialGraph german_partial_graph();

// Deterministic synthetic stand-in with the raw file's format and causal
// texture (sex and age drive the credit and housing blocks). Used by tests
// and as a fallback when the real file is not available.
std::string generate_german_standin(int rows, std::uint64_t seed);

// FNV-1a 64-bit checksum of a byte string, lowercase hex.
std::string fnv1a_hex(const std::string& bytes);

// Environment lookup with fallback (data/output roots).
std::string env_or(const char* name, const std::string& fallback);

}  // namespace cnflow
