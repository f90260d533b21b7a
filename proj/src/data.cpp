#include "cnflow/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "cnflow/errors.hpp"
#include "cnflow/math.hpp"
#include "cnflow/rng.hpp"

namespace cnflow {

namespace {

void atomic_write(const std::string& path, const std::string& text) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::trunc | std::ios::binary);
    if (!f) throw IOError("cannot write " + tmp);
    f << text;
    if (!f) throw IOError("write failed for " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw IOError("cannot rename " + tmp + " to " + path);
}

}  // namespace

GeneratedData generate_dataset(const ScmSpec& scm, const SplitSizes& sizes,
                               std::uint64_t seed) {
  if (sizes.train < 0 || sizes.val < 0 || sizes.test < 0)
    throw ConfigError("generate_dataset: negative split size");
  GeneratedData out;
  out.scm_name = scm.name;
  out.seed = seed;
  out.train = sizes.train > 0
                  ? sample_scm(scm, sizes.train, derive_seed(seed, "train"))
                  : Eigen::MatrixXd(0, scm.d());
  out.val = sizes.val > 0
                ? sample_scm(scm, sizes.val, derive_seed(seed, "val"))
                : Eigen::MatrixXd(0, scm.d());
  out.test = sizes.test > 0
                 ? sample_scm(scm, sizes.test, derive_seed(seed, "test"))
                 : Eigen::MatrixXd(0, scm.d());
  return out;
}

void write_matrix_csv(const std::string& path,
                      const std::vector<std::string>& header,
                      const Eigen::MatrixXd& values) {
  if (static_cast<Eigen::Index>(header.size()) != values.cols())
    throw ShapeError("write_matrix_csv: header width != matrix width");
  std::ostringstream out;
  out.precision(17);
  for (size_t j = 0; j < header.size(); ++j)
    out << (j ? "," : "") << header[j];
  out << "\n";
  for (Eigen::Index r = 0; r < values.rows(); ++r) {
    for (Eigen::Index j = 0; j < values.cols(); ++j)
      out << (j ? "," : "") << values(r, j);
    out << "\n";
  }
  atomic_write(path, out.str());
}

Eigen::MatrixXd read_matrix_csv(const std::string& path,
                                std::vector<std::string>* header) {
  std::ifstream f(path);
  if (!f) throw IOError("cannot open " + path);
  std::string line;
  if (!std::getline(f, line))
    throw FormatError(path + ": empty file, expected a header row");
  std::vector<std::string> cols;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cols.push_back(cell);
  }
  if (cols.empty()) throw FormatError(path + ": empty header row");
  if (header != nullptr) *header = cols;
  std::vector<double> data;
  Eigen::Index rows = 0;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    Eigen::Index got = 0;
    while (std::getline(ss, cell, ',')) {
      try {
        size_t used = 0;
        data.push_back(std::stod(cell, &used));
        if (used != cell.size()) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        throw FormatError(path + ": non-numeric cell '" + cell + "' in row " +
                          std::to_string(rows + 1));
      }
      ++got;
    }
    if (got != static_cast<Eigen::Index>(cols.size()))
      throw FormatError(path + ": row " + std::to_string(rows + 1) + " has " +
                        std::to_string(got) + " cells, expected " +
                        std::to_string(cols.size()));
    ++rows;
  }
  Eigen::MatrixXd m(rows, static_cast<Eigen::Index>(cols.size()));
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      m(r, j) = data[static_cast<size_t>(r * m.cols() + j)];
  return m;
}

void write_dataset(const GeneratedData& data, const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IOError("cannot create directory " + dir + ": " + ec.message());
  std::vector<std::string> header;
  for (Eigen::Index j = 0; j < data.train.cols(); ++j)
    header.push_back("x" + std::to_string(j + 1));
  const std::filesystem::path base(dir);
  write_matrix_csv((base / "train.csv").string(), header, data.train);
  write_matrix_csv((base / "val.csv").string(), header, data.val);
  write_matrix_csv((base / "test.csv").string(), header, data.test);
  nlohmann::json meta;
  meta["scm"] = data.scm_name;
  meta["seed"] = data.seed;
  meta["sizes"] = {{"train", data.train.rows()},
                   {"val", data.val.rows()},
                   {"test", data.test.rows()}};
  atomic_write((base / "metadata.json").string(), meta.dump(1) + "\n");
}

Eigen::VectorXd dequantize(const Eigen::VectorXi& column, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::VectorXd out(column.size());
  for (Eigen::Index r = 0; r < column.size(); ++r)
    out(r) = static_cast<double>(column(r)) + rng.uniform();
  return out;
}

Eigen::VectorXi requantize(const Eigen::VectorXd& column) {
  Eigen::VectorXi out(column.size());
  for (Eigen::Index r = 0; r < column.size(); ++r)
    out(r) = static_cast<int>(std::floor(column(r)));
  return out;
}

void SplitSpec::validate() const {
  if (train_fraction < 0.0 || val_fraction < 0.0 || test_fraction < 0.0)
    throw ConfigError("split: fractions must be non-negative");
  if (std::abs(train_fraction + val_fraction + test_fraction - 1.0) > 1e-9)
    throw ConfigError("split: fractions must sum to 1");
  if (num_folds < 1) throw ConfigError("split: num_folds must be >= 1");
  if (fold < 0 || fold >= num_folds)
    throw ConfigError("split: fold " + std::to_string(fold) +
                      " out of range for " + std::to_string(num_folds) +
                      " folds");
}

SplitIndices kfold_split(int rows, const SplitSpec& spec) {
  spec.validate();
  if (rows < 1) throw ConfigError("split: rows must be >= 1");
  Rng rng(derive_seed(spec.seed, "kfold"));
  std::vector<int> perm = rng.permutation(rows);
  // Rotate the shared permutation so each fold sees shifted windows.
  const int shift = static_cast<int>(
      (static_cast<long>(rows) * spec.fold) / spec.num_folds);
  std::rotate(perm.begin(), perm.begin() + shift, perm.end());
  const int n_train = static_cast<int>(std::floor(spec.train_fraction * rows));
  const int n_val = static_cast<int>(std::floor(spec.val_fraction * rows));
  SplitIndices out;
  out.train.assign(perm.begin(), perm.begin() + n_train);
  out.val.assign(perm.begin() + n_train, perm.begin() + n_train + n_val);
  out.test.assign(perm.begin() + n_train + n_val, perm.end());
  return out;
}

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(h));
  return buf;
}

std::string env_or(const char* name, const std::string& fallback) {
  const char* v = std::getenv(name);
  return v != nullptr && *v != '\0' ? std::string(v) : fallback;
}

PartialGraph german_partial_graph() {
  // Nodes: 0 sex, 1 age, 2 credit amount, 3 repayment history,
  // 4 checking account, 5 savings, 6 housing.
  PartialGraph p;
  p.d = 7;
  for (int cause : {0, 1})
    for (int effect : {2, 3, 4, 5, 6}) p.known_edges.push_back({cause, effect});
  p.unknown_pairs = {{2, 3}, {4, 5}, {4, 6}, {5, 6}};
  return p;
}

namespace {

int code_from_table(const std::string& token,
                    const std::vector<std::string>& table, const char* what,
                    int row) {
  for (size_t k = 0; k < table.size(); ++k)
    if (token == table[k]) return static_cast<int>(k);
  throw FormatError(std::string("german: unknown ") + what + " code '" +
                    token + "' in row " + std::to_string(row + 1));
}

int int_field(const std::string& token, const char* what, int row) {
  try {
    size_t used = 0;
    int v = std::stoi(token, &used);
    if (used != token.size()) throw std::invalid_argument(token);
    return v;
  } catch (const std::exception&) {
    throw FormatError(std::string("german: non-integer ") + what + " '" +
                      token + "' in row " + std::to_string(row + 1));
  }
}

}  // namespace

GermanData load_german(const std::string& path,
                       const std::string& expected_checksum,
                       std::uint64_t seed) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IOError("cannot open " + path);
  std::stringstream raw;
  raw << f.rdbuf();
  const std::string bytes = raw.str();

  GermanData out;
  out.checksum = fnv1a_hex(bytes);
  if (!expected_checksum.empty() && expected_checksum != out.checksum)
    throw ChecksumError("german: checksum " + out.checksum +
                        " does not match pinned " + expected_checksum);

  static const std::vector<std::string> kChecking = {"A11", "A12", "A13",
                                                     "A14"};
  static const std::vector<std::string> kHistory = {"A30", "A31", "A32", "A33",
                                                    "A34"};
  static const std::vector<std::string> kSavings = {"A61", "A62", "A63", "A64",
                                                    "A65"};
  static const std::vector<std::string> kPersonal = {"A91", "A92", "A93",
                                                     "A94", "A95"};
  static const std::vector<std::string> kHousing = {"A151", "A152", "A153"};

  std::vector<std::array<int, 7>> rows;  // sex, age, amount(raw), hist, chk, sav, hous
  std::vector<int> labels;
  std::istringstream lines(bytes);
  std::string line;
  int row_idx = 0;
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::vector<std::string> fields;
    std::string tok;
    while (ss >> tok) fields.push_back(tok);
    if (fields.size() < 21)
      throw MissingColumnError("german: row " + std::to_string(row_idx + 1) +
                               " has " + std::to_string(fields.size()) +
                               " fields, expected 21");
    std::array<int, 7> r{};
    // Sex from the personal-status field: A92/A95 are the female codes.
    const int personal = code_from_table(fields[8], kPersonal, "personal",
                                         row_idx);
    r[0] = (personal == 1 || personal == 4) ? 1 : 0;
    r[1] = int_field(fields[12], "age", row_idx);
    r[2] = int_field(fields[4], "credit amount", row_idx);
    r[3] = code_from_table(fields[2], kHistory, "credit history", row_idx);
    r[4] = code_from_table(fields[0], kChecking, "checking account", row_idx);
    r[5] = code_from_table(fields[5], kSavings, "savings", row_idx);
    r[6] = code_from_table(fields[14], kHousing, "housing", row_idx);
    if (r[1] < 0 || r[2] < 0)
      throw FormatError("german: negative-coded value in row " +
                        std::to_string(row_idx + 1));
    const int lab = int_field(fields[20], "label", row_idx);
    if (lab != 1 && lab != 2)
      throw FormatError("german: label must be 1 or 2 in row " +
                        std::to_string(row_idx + 1));
    rows.push_back(r);
    labels.push_back(lab == 1 ? 1 : 0);
    ++row_idx;
  }
  if (rows.empty()) throw FormatError("german: no data rows in " + path);

  const int n = static_cast<int>(rows.size());
  // Credit amount is bucketed into deciles of its own empirical distribution
  // so all seven features are discrete, as in the study design.
  Eigen::VectorXd amounts(n);
  for (int r = 0; r < n; ++r) amounts(r) = rows[static_cast<size_t>(r)][2];
  std::vector<double> breaks;
  for (int k = 1; k <= 9; ++k) breaks.push_back(quantile(amounts, k / 10.0));

  out.raw_codes.resize(n, 7);
  out.labels.resize(n);
  for (int r = 0; r < n; ++r) {
    const auto& row = rows[static_cast<size_t>(r)];
    int bucket = 0;
    for (double b : breaks) bucket += row[2] > b ? 1 : 0;
    out.raw_codes(r, 0) = row[0];
    out.raw_codes(r, 1) = row[1];
    out.raw_codes(r, 2) = bucket;
    out.raw_codes(r, 3) = row[3];
    out.raw_codes(r, 4) = row[4];
    out.raw_codes(r, 5) = row[5];
    out.raw_codes(r, 6) = row[6];
    out.labels(r) = labels[static_cast<size_t>(r)];
  }

  const std::vector<std::string> names = {
      "sex",     "age",     "credit amount", "repayment history",
      "checking account", "savings", "housing"};
  out.schema.clear();
  for (int j = 0; j < 7; ++j) {
    ColumnSchema c;
    c.name = names[static_cast<size_t>(j)];
    c.kind = ColumnKind::Discrete;
    c.categories = out.raw_codes.col(j).maxCoeff() + 1;
    if (c.categories < 2)
      throw FormatError("german: column '" + c.name +
                        "' is constant; need >= 2 categories");
    out.schema.push_back(c);
  }

  out.values.resize(n, 7);
  for (int j = 0; j < 7; ++j)
    out.values.col(j) = dequantize(
        out.raw_codes.col(j),
        derive_seed(seed, "dequant/" + names[static_cast<size_t>(j)]));

  out.partial = german_partial_graph();

  std::ostringstream man;
  man << "german credit ingestion manifest v1\n"
      << "checksum fnv1a64 " << out.checksum << "\n"
      << "rows " << n << "\n"
      << "feature sex <- field 9 (A92,A95 -> 1 female; A91,A93,A94 -> 0 male)\n"
      << "feature age <- field 13 (years, coded as-is)\n"
      << "feature credit amount <- field 5 (decile bucket 0-9; breaks:";
  man.precision(17);
  for (double b : breaks) man << ' ' << b;
  man << ")\n"
      << "feature repayment history <- field 3 (A30..A34 -> 0..4)\n"
      << "feature checking account <- field 1 (A11..A14 -> 0..3)\n"
      << "feature savings <- field 6 (A61..A65 -> 0..4)\n"
      << "feature housing <- field 15 (A151..A153 -> 0..2)\n"
      << "label credit risk <- field 21 (1 good -> 1, 2 bad -> 0)\n"
      << "dequantization uniform(0,1), seed " << seed << "\n";
  out.manifest = man.str();
  return out;
}

std::string generate_german_standin(int rows, std::uint64_t seed) {
  if (rows < 1) throw ConfigError("german standin: rows must be >= 1");
  Rng rng(seed);
  static const char* kPersonalMale[] = {"A91", "A93", "A94"};
  static const char* kPersonalFemale[] = {"A92", "A95"};
  static const char* kPurpose[] = {"A40", "A41", "A42", "A43", "A46"};
  auto clampi = [](double v, int lo, int hi) {
    return std::max(lo, std::min(hi, static_cast<int>(std::lround(v))));
  };
  std::ostringstream out;
  for (int r = 0; r < rows; ++r) {
    const bool female = rng.uniform() < 0.31;
    const int age = 19 + std::min(56, static_cast<int>(std::floor(
                                          -14.0 * std::log(rng.uniform_open()))));
    const double za = (age - 35.0) / 10.0;
    const double s = female ? 1.0 : 0.0;
    const int checking = clampi(1.2 + 0.5 * za - 0.4 * s + 0.8 * rng.normal(),
                                0, 3);
    const int savings = clampi(1.5 + 0.4 * za - 0.5 * s + 1.0 * rng.normal(),
                               0, 4);
    const int housing = clampi(0.9 + 0.6 * za + 0.2 * s + 0.5 * rng.normal(),
                               0, 2);
    const int history = clampi(2.2 + 0.5 * za - 0.3 * s + 0.9 * rng.normal(),
                               0, 4);
    const double log_amount =
        7.2 + 0.15 * s - 0.1 * za + 0.45 * rng.normal();
    const int amount = std::max(250, static_cast<int>(std::exp(log_amount)));
    const double score = 0.55 * (checking - 1.2) + 0.45 * (savings - 1.5) +
                         0.4 * (history - 2.0) + 0.35 * za - 0.5 * s -
                         0.3 * (log_amount - 7.2);
    const int label = rng.uniform() < logistic(1.0 + score) ? 1 : 2;
    const char* personal =
        female ? kPersonalFemale[rng.below(2)] : kPersonalMale[rng.below(3)];
    out << 'A' << (11 + checking) << ' '                       // checking
        << 4 + static_cast<int>(rng.below(68)) << ' '          // duration
        << 'A' << (30 + history) << ' '                        // history
        << kPurpose[rng.below(5)] << ' '                       // purpose
        << amount << ' '                                       // amount
        << 'A' << (61 + savings) << ' '                        // savings
        << 'A' << (71 + rng.below(5)) << ' '                   // employment
        << 1 + rng.below(4) << ' '                             // installment
        << personal << ' '                                     // sex/status
        << 'A' << (101 + rng.below(3)) << ' '                  // debtors
        << 1 + rng.below(4) << ' '                             // residence
        << 'A' << (121 + rng.below(4)) << ' '                  // property
        << age << ' '                                          // age
        << 'A' << (141 + rng.below(3)) << ' '                  // other plans
        << 'A' << (151 + housing) << ' '                       // housing
        << 1 + rng.below(4) << ' '                             // credits
        << 'A' << (171 + rng.below(4)) << ' '                  // job
        << 1 + rng.below(2) << ' '                             // liable
        << 'A' << (191 + rng.below(2)) << ' '                  // telephone
        << 'A' << (201 + rng.below(2)) << ' '                  // foreign
        << label << '\n';
  }
  return out.str();
}

}  // namespace cnflow
