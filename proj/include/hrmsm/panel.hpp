#pragma once

#include <optional>
#include <string>
#include <vector>

#include "hrmsm/errors.hpp"

namespace hrmsm {

// Finite treatment label set with a numeric score per level. Treatments are
// stored internally as level indices; scores feed the numeric design atoms.
struct TreatmentLevels {
  std::vector<std::string> labels;
  std::vector<double> scores;

  int index_of(const std::string& label) const;
  std::size_t size() const { return labels.size(); }
  double score(int level) const { return scores[static_cast<std::size_t>(level)]; }
  void validate() const;
};

enum class OutcomeKind { continuous, binary, counts };

std::string to_string(OutcomeKind k);

// Per-time outcome, defined for times 1..K+1 (slot 0 is unused). For counts
// the numeric value is the event rate C/N; the raw pair is kept alongside.
struct OutcomeSeries {
  OutcomeKind kind = OutcomeKind::continuous;
  std::vector<double> value;
  std::vector<long> events;
  std::vector<long> trials;

  void validate(int K) const;
};

// One longitudinal realization: treatments A(0..K) as level indices,
// covariate vectors L(0..K+1), outcomes Y(1..K+1). Shared between observed
// units and simulated trajectories.
struct SeqData {
  std::vector<int> treatments;
  std::vector<std::vector<double>> covariates;
  OutcomeSeries outcome;

  int K() const { return static_cast<int>(treatments.size()) - 1; }
};

struct UnitRecord {
  std::string id;
  SeqData seq;
};

// Dataset-level description shared by observed panels and simulators.
struct PanelMeta {
  std::vector<std::string> covariate_names;
  TreatmentLevels levels;
  OutcomeKind outcome_kind = OutcomeKind::continuous;
  std::string outcome_name = "y";

  int covariate_index(const std::string& name) const;
  bool is_outcome(const std::string& name) const { return name == outcome_name; }
};

struct PanelDataset {
  PanelMeta meta;
  int K = 0;
  std::vector<UnitRecord> units;

  std::size_t n_units() const { return units.size(); }
  void validate() const;
};

// History window: size s and target times (the set of t with s-1 <= t <= K
// whose outcome Y(t+1) is analyzed).
struct WindowSpec {
  int s = 1;
  std::vector<int> targets;

  static WindowSpec all_targets(int s, int K);
  void validate(int K) const;
};

// Selection of time-specific baseline covariates V(t-s+1). Atoms name a
// covariate and where to read it: at the window start t-s+1 or at time 0.
enum class VAnchor { window_start, study_baseline };

struct VAtom {
  std::string covariate;
  VAnchor anchor = VAnchor::window_start;
};

struct VSpec {
  std::vector<VAtom> atoms;

  void validate(const PanelMeta& meta) const;
};

// The t-specific view of one unit: time t-s+1 is treated as baseline, the s
// window treatments are the exposure, and Y(t+1) is the single outcome. The
// pre-window block holds (A(0..t-s), L(0..t-s+1)) verbatim.
struct TView {
  int t = 0;
  int s = 1;
  std::vector<int> pre_treatments;
  std::vector<std::vector<double>> pre_covariates;
  std::vector<double> pre_outcomes;  // Y(1..t-s+1); empty when the block stops at time 0
  std::vector<int> window_treatments;            // A(t-s+1..t)
  std::vector<std::vector<double>> window_covariates;  // L(t-s+2..t+1)
  std::vector<double> window_outcomes;                 // Y(t-s+2..t+1)
  double outcome = 0.0;  // Y(t+1)
  long outcome_events = 0;
  long outcome_trials = 0;

  int window_start() const { return t - s + 1; }
};

TView build_t_view(const SeqData& seq, const WindowSpec& window, int t);

std::vector<double> eval_v(const TView& view, const VSpec& vspec, const PanelMeta& meta);

// Same extraction directly from a sequence (used on simulated trajectories).
std::vector<double> eval_v_seq(const SeqData& seq, const VSpec& vspec, const PanelMeta& meta,
                               int t, int s);

// One element of a conditioning history, tagged with its position: kind 0 is
// a covariate channel, kind 1 the outcome channel, kind 2 the treatment.
struct CondEntry {
  int time = 0;
  int kind = 0;
  int channel = 0;
  double value = 0.0;

  friend bool operator==(const CondEntry&, const CondEntry&) = default;
};

// Conditioning sets in canonical chronological order, assembled either from
// the raw sequence or through a TView's own index arithmetic. The pairs must
// agree element-wise for every inner time of every view.
std::vector<CondEntry> covariate_conditioning(const SeqData& seq, int j);
std::vector<CondEntry> covariate_conditioning_view(const TView& view, int j);
std::vector<CondEntry> treatment_conditioning(const SeqData& seq, int j);
std::vector<CondEntry> treatment_conditioning_view(const TView& view, int j);

// Long-format CSV schema: which columns hold what. For counts outcomes the
// events/trials columns are used, otherwise the value column.
struct ColumnSchema {
  std::string id = "id";
  std::string time = "time";
  std::string treatment = "a";
  OutcomeKind outcome_kind = OutcomeKind::continuous;
  std::string outcome_value = "y";
  std::string outcome_events = "c";
  std::string outcome_trials = "n";
  std::string outcome_name = "y";
  std::vector<std::string> covariates;
};

PanelDataset load_panel(const std::string& path, const ColumnSchema& schema,
                        const TreatmentLevels& levels);

void save_panel(const PanelDataset& data, const std::string& path, const ColumnSchema& schema);

}  // namespace hrmsm
