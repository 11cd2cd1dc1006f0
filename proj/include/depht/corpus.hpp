// Paired sentence / FunQL corpora, prediction files and exact-match scoring.
#pragma once

#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "depht/funql.hpp"
#include "depht/hybrid_tree.hpp"

namespace depht {

class IOError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class LengthMismatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Instance {
  Sentence sentence;
  MeaningRepresentation gold;
  std::string language = "en";
};

struct RecordError {
  int line = 0;  // first line of the record
  std::string message;
};

struct LoadResult {
  std::vector<Instance> instances;
  std::vector<RecordError> errors;
};

// Records are a sentence line followed by a FunQL line; records are
// separated by blank lines. Bad records are collected, not fatal.
LoadResult load_corpus(std::istream& in, const SignatureTable& signatures, const std::string& language = "en");
LoadResult load_corpus_file(const std::string& path, const SignatureTable& signatures,
                            const std::string& language = "en");
void save_corpus(std::ostream& out, std::span<const Instance> instances);

using Prediction = std::optional<MeaningRepresentation>;

// One FunQL string per line, empty line for an abstention.
void write_predictions(std::ostream& out, std::span<const Prediction> predictions);
// Lines that fail to parse count as produced but wrong (stored as the raw
// text in `unparsed`).
struct PredictionFile {
  std::vector<Prediction> predictions;
  std::vector<bool> unparsed;
};
PredictionFile read_predictions(std::istream& in, const SignatureTable& signatures);

struct Metrics {
  int n = 0;
  int produced = 0;
  int correct = 0;
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

Metrics score_counts(int correct, int produced, int total);
Metrics evaluate(std::span<const Prediction> predictions, std::span<const MeaningRepresentation> golds);
Metrics evaluate(const PredictionFile& predictions, std::span<const MeaningRepresentation> golds);

// GeoQuery-style Prolog query for a FunQL tree. Text only.
std::string to_prolog(const MeaningRepresentation& mr);

}  // namespace depht
