#include "hrmsm/panel.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace hrmsm {

int TreatmentLevels::index_of(const std::string& label) const {
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] == label) return static_cast<int>(i);
  return -1;
}

void TreatmentLevels::validate() const {
  if (labels.empty()) throw ValidationError("treatment_levels must be nonempty");
  if (labels.size() != scores.size())
    throw ValidationError("treatment_levels: one numeric score per label required");
  std::set<std::string> seen(labels.begin(), labels.end());
  if (seen.size() != labels.size())
    throw ValidationError("treatment_levels: duplicate label");
}

std::string to_string(OutcomeKind k) {
  switch (k) {
    case OutcomeKind::continuous: return "continuous";
    case OutcomeKind::binary: return "binary";
    case OutcomeKind::counts: return "counts";
  }
  return "?";
}

void OutcomeSeries::validate(int K) const {
  const std::size_t want = static_cast<std::size_t>(K) + 2;
  if (value.size() != want)
    throw ValidationError("outcome series has wrong length");
  for (int t = 1; t <= K + 1; ++t) {
    if (!std::isfinite(value[static_cast<std::size_t>(t)]))
      throw ValidationError("outcome missing at time " + std::to_string(t));
  }
  if (kind == OutcomeKind::counts) {
    if (events.size() != want || trials.size() != want)
      throw ValidationError("counts outcome requires events and trials for every time");
    for (int t = 1; t <= K + 1; ++t) {
      const auto c = events[static_cast<std::size_t>(t)];
      const auto n = trials[static_cast<std::size_t>(t)];
      if (n < 1) throw ValidationError("counts outcome needs trials >= 1 at time " + std::to_string(t));
      if (c < 0 || c > n)
        throw ValidationError("counts outcome needs 0 <= events <= trials at time " + std::to_string(t));
    }
  }
  if (kind == OutcomeKind::binary) {
    for (int t = 1; t <= K + 1; ++t) {
      const double y = value[static_cast<std::size_t>(t)];
      if (y != 0.0 && y != 1.0)
        throw ValidationError("binary outcome must be 0/1 at time " + std::to_string(t));
    }
  }
}

int PanelMeta::covariate_index(const std::string& name) const {
  for (std::size_t i = 0; i < covariate_names.size(); ++i)
    if (covariate_names[i] == name) return static_cast<int>(i);
  return -1;
}

void PanelDataset::validate() const {
  meta.levels.validate();
  if (K < 0) throw ValidationError("panel needs K >= 0");
  for (const auto& unit : units) {
    const auto& seq = unit.seq;
    if (seq.K() != K)
      throw ValidationError("unit " + unit.id + ": treatment sequence length mismatch");
    if (seq.covariates.size() != static_cast<std::size_t>(K) + 2)
      throw ValidationError("unit " + unit.id + ": covariate sequence length mismatch");
    for (int a : seq.treatments) {
      if (a < 0 || a >= static_cast<int>(meta.levels.size()))
        throw ValidationError("unit " + unit.id + ": treatment outside treatment_levels");
    }
    for (const auto& l : seq.covariates) {
      if (l.size() != meta.covariate_names.size())
        throw ValidationError("unit " + unit.id + ": covariate vector arity mismatch");
    }
    if (seq.outcome.kind != meta.outcome_kind)
      throw ValidationError("unit " + unit.id + ": outcome kind mismatch");
    seq.outcome.validate(K);
  }
}

WindowSpec WindowSpec::all_targets(int s, int K) {
  WindowSpec w;
  w.s = s;
  for (int t = s - 1; t <= K; ++t) w.targets.push_back(t);
  return w;
}

void WindowSpec::validate(int K) const {
  if (s < 1 || s > K + 1)
    throw ValidationError("window size s must satisfy 1 <= s <= K+1 (s=" + std::to_string(s) +
                          ", K=" + std::to_string(K) + ")");
  if (targets.empty()) throw ValidationError("window targets must be nonempty");
  for (int t : targets) {
    if (t < s - 1 || t > K)
      throw ValidationError("target time " + std::to_string(t) + " outside {s-1..K}");
  }
}

void VSpec::validate(const PanelMeta& meta) const {
  for (const auto& atom : atoms) {
    if (meta.covariate_index(atom.covariate) < 0)
      throw ValidationError("V atom references unknown covariate '" + atom.covariate + "'");
  }
}

TView build_t_view(const SeqData& seq, const WindowSpec& window, int t) {
  if (std::find(window.targets.begin(), window.targets.end(), t) == window.targets.end())
    throw ValidationError("t=" + std::to_string(t) + " is not a target time of the window");
  const int s = window.s;
  const int start = t - s + 1;

  TView view;
  view.t = t;
  view.s = s;
  for (int j = 0; j <= t - s; ++j) view.pre_treatments.push_back(seq.treatments[static_cast<std::size_t>(j)]);
  for (int j = 0; j <= start; ++j) view.pre_covariates.push_back(seq.covariates[static_cast<std::size_t>(j)]);
  for (int j = 1; j <= start; ++j) view.pre_outcomes.push_back(seq.outcome.value[static_cast<std::size_t>(j)]);
  for (int j = start; j <= t; ++j) view.window_treatments.push_back(seq.treatments[static_cast<std::size_t>(j)]);
  for (int j = start + 1; j <= t + 1; ++j) {
    view.window_covariates.push_back(seq.covariates[static_cast<std::size_t>(j)]);
    view.window_outcomes.push_back(seq.outcome.value[static_cast<std::size_t>(j)]);
  }
  view.outcome = seq.outcome.value[static_cast<std::size_t>(t) + 1];
  if (seq.outcome.kind == OutcomeKind::counts) {
    view.outcome_events = seq.outcome.events[static_cast<std::size_t>(t) + 1];
    view.outcome_trials = seq.outcome.trials[static_cast<std::size_t>(t) + 1];
  }
  return view;
}

namespace {

double view_covariate_at(const TView& view, int time, int channel) {
  const int start = view.window_start();
  if (time >= start + 1)
    return view.window_covariates[static_cast<std::size_t>(time - start - 1)][static_cast<std::size_t>(channel)];
  return view.pre_covariates[static_cast<std::size_t>(time)][static_cast<std::size_t>(channel)];
}

}  // namespace

std::vector<double> eval_v(const TView& view, const VSpec& vspec, const PanelMeta& meta) {
  std::vector<double> out;
  out.reserve(vspec.atoms.size());
  const int start = view.window_start();
  for (const auto& atom : vspec.atoms) {
    const int idx = meta.covariate_index(atom.covariate);
    if (idx < 0) throw ValidationError("V atom references unknown covariate '" + atom.covariate + "'");
    const int time = atom.anchor == VAnchor::window_start ? start : 0;
    out.push_back(view_covariate_at(view, time, idx));
  }
  return out;
}

std::vector<double> eval_v_seq(const SeqData& seq, const VSpec& vspec, const PanelMeta& meta,
                               int t, int s) {
  std::vector<double> out;
  out.reserve(vspec.atoms.size());
  for (const auto& atom : vspec.atoms) {
    const int idx = meta.covariate_index(atom.covariate);
    if (idx < 0) throw ValidationError("V atom references unknown covariate '" + atom.covariate + "'");
    const int time = atom.anchor == VAnchor::window_start ? t - s + 1 : 0;
    out.push_back(seq.covariates[static_cast<std::size_t>(time)][static_cast<std::size_t>(idx)]);
  }
  return out;
}

namespace {

void push_slice(std::vector<CondEntry>& out, int time, const std::vector<double>& l,
                const double* outcome_value) {
  for (std::size_t c = 0; c < l.size(); ++c)
    out.push_back({time, 0, static_cast<int>(c), l[c]});
  if (outcome_value != nullptr && time >= 1)
    out.push_back({time, 1, 0, *outcome_value});
}

}  // namespace

std::vector<CondEntry> covariate_conditioning(const SeqData& seq, int j) {
  // (L-bar(j-1), A-bar(j-1)) in chronological order.
  std::vector<CondEntry> out;
  for (int time = 0; time <= j - 1; ++time) {
    const double y = time >= 1 ? seq.outcome.value[static_cast<std::size_t>(time)] : 0.0;
    push_slice(out, time, seq.covariates[static_cast<std::size_t>(time)], time >= 1 ? &y : nullptr);
    out.push_back({time, 2, 0, static_cast<double>(seq.treatments[static_cast<std::size_t>(time)])});
  }
  return out;
}

std::vector<CondEntry> treatment_conditioning(const SeqData& seq, int j) {
  // (A-bar(j-1), L-bar(j)): everything before A(j), including the slice at j.
  std::vector<CondEntry> out = covariate_conditioning(seq, j);
  const double y = j >= 1 ? seq.outcome.value[static_cast<std::size_t>(j)] : 0.0;
  push_slice(out, j, seq.covariates[static_cast<std::size_t>(j)], j >= 1 ? &y : nullptr);
  return out;
}

namespace {

// Walks the view's own structures; all times are reconstructed from the
// view's (t, s) arithmetic so any indexing defect in the builder surfaces as
// a mismatch against the conventional assembly.
void view_push_upto(const TView& view, int last_time, bool include_treatment_at_last,
                    std::vector<CondEntry>& out) {
  const int start = view.window_start();
  for (int time = 0; time <= last_time; ++time) {
    const std::vector<double>* l = nullptr;
    const double* y = nullptr;
    double yval = 0.0;
    if (time <= start) {
      l = &view.pre_covariates[static_cast<std::size_t>(time)];
      if (time >= 1) {
        yval = view.pre_outcomes[static_cast<std::size_t>(time) - 1];
        y = &yval;
      }
    } else {
      l = &view.window_covariates[static_cast<std::size_t>(time - start - 1)];
      yval = view.window_outcomes[static_cast<std::size_t>(time - start - 1)];
      y = &yval;
    }
    push_slice(out, time, *l, y);
    const bool want_a = time < last_time || include_treatment_at_last;
    if (want_a && time <= view.t) {
      const int a = time < start ? view.pre_treatments[static_cast<std::size_t>(time)]
                                 : view.window_treatments[static_cast<std::size_t>(time - start)];
      out.push_back({time, 2, 0, static_cast<double>(a)});
    }
  }
}

}  // namespace

std::vector<CondEntry> covariate_conditioning_view(const TView& view, int j) {
  std::vector<CondEntry> out;
  view_push_upto(view, j - 1, true, out);
  return out;
}

std::vector<CondEntry> treatment_conditioning_view(const TView& view, int j) {
  std::vector<CondEntry> out;
  view_push_upto(view, j, false, out);
  return out;
}

// ---------------------------------------------------------------------------
// CSV input/output

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(ch);
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  fields.push_back(cur);
  return fields;
}

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& s, const std::string& what) {
  const std::string t = trim(s);
  if (t.empty()) throw ValidationError("missing value for " + what);
  try {
    std::size_t pos = 0;
    const double v = std::stod(t, &pos);
    if (pos != t.size()) throw ValidationError("");
    return v;
  } catch (...) {
    throw ValidationError("cannot parse '" + t + "' as a number for " + what);
  }
}

long parse_long(const std::string& s, const std::string& what) {
  const double v = parse_double(s, what);
  const long l = static_cast<long>(std::llround(v));
  if (std::abs(v - static_cast<double>(l)) > 1e-9)
    throw ValidationError("expected an integer for " + what + ", got '" + trim(s) + "'");
  return l;
}

struct RawRow {
  long time = 0;
  std::vector<std::string> fields;
};

}  // namespace

PanelDataset load_panel(const std::string& path, const ColumnSchema& schema,
                        const TreatmentLevels& levels) {
  levels.validate();
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");

  std::string line;
  if (!std::getline(in, line)) throw IoError("empty file '" + path + "'");
  const auto header = split_csv_line(line);
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[trim(header[i])] = i;

  auto col_of = [&](const std::string& name) {
    auto it = col.find(name);
    if (it == col.end()) throw ValidationError("column '" + name + "' not found in '" + path + "'");
    return it->second;
  };

  const std::size_t c_id = col_of(schema.id);
  const std::size_t c_time = col_of(schema.time);
  const std::size_t c_a = col_of(schema.treatment);
  std::size_t c_y = 0, c_ev = 0, c_tr = 0;
  if (schema.outcome_kind == OutcomeKind::counts) {
    c_ev = col_of(schema.outcome_events);
    c_tr = col_of(schema.outcome_trials);
  } else {
    c_y = col_of(schema.outcome_value);
  }
  std::vector<std::size_t> c_cov;
  for (const auto& name : schema.covariates) c_cov.push_back(col_of(name));

  // Collect rows per unit, keeping first-appearance order of ids.
  std::vector<std::string> id_order;
  std::map<std::string, std::vector<RawRow>> rows;
  long max_time = -1;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto fields = split_csv_line(line);
    if (fields.size() < header.size())
      throw ValidationError("line " + std::to_string(line_no) + ": expected " +
                            std::to_string(header.size()) + " fields");
    const std::string id = trim(fields[c_id]);
    const long time = parse_long(fields[c_time], "time (line " + std::to_string(line_no) + ")");
    if (time < 0) throw ValidationError("negative time at line " + std::to_string(line_no));
    if (rows.find(id) == rows.end()) id_order.push_back(id);
    rows[id].push_back({time, std::move(fields)});
    max_time = std::max(max_time, time);
  }
  if (max_time < 1)
    throw ValidationError("panel needs times 0..K+1 with K >= 0; max time seen is " +
                          std::to_string(max_time));
  const int K = static_cast<int>(max_time) - 1;

  PanelDataset data;
  data.K = K;
  data.meta.covariate_names = schema.covariates;
  data.meta.levels = levels;
  data.meta.outcome_kind = schema.outcome_kind;
  data.meta.outcome_name = schema.outcome_name;

  for (const auto& id : id_order) {
    auto& unit_rows = rows[id];
    std::sort(unit_rows.begin(), unit_rows.end(),
              [](const RawRow& a, const RawRow& b) { return a.time < b.time; });
    for (std::size_t i = 0; i + 1 < unit_rows.size(); ++i) {
      if (unit_rows[i].time == unit_rows[i + 1].time)
        throw ValidationError("unit " + id + ": duplicate row at time " +
                              std::to_string(unit_rows[i].time));
    }
    // Completeness: every time 0..K+1 must be present.
    std::size_t next = 0;
    for (long t = 0; t <= max_time; ++t) {
      if (next >= unit_rows.size() || unit_rows[next].time != t)
        throw ValidationError("unit " + id + ": missing row at time " + std::to_string(t));
      ++next;
    }
    if (next != unit_rows.size())
      throw ValidationError("unit " + id + ": rows beyond time " + std::to_string(max_time));

    UnitRecord unit;
    unit.id = id;
    auto& seq = unit.seq;
    seq.outcome.kind = schema.outcome_kind;
    seq.outcome.value.assign(static_cast<std::size_t>(K) + 2, 0.0);
    if (schema.outcome_kind == OutcomeKind::counts) {
      seq.outcome.events.assign(static_cast<std::size_t>(K) + 2, 0);
      seq.outcome.trials.assign(static_cast<std::size_t>(K) + 2, 1);
    }
    for (long t = 0; t <= max_time; ++t) {
      const auto& f = unit_rows[static_cast<std::size_t>(t)].fields;
      const std::string where = "unit " + id + ", time " + std::to_string(t);
      if (t <= K) {
        const std::string label = trim(f[c_a]);
        const int level = levels.index_of(label);
        if (level < 0)
          throw ValidationError(where + ": treatment '" + label + "' not in treatment_levels");
        seq.treatments.push_back(level);
      }
      std::vector<double> l;
      l.reserve(c_cov.size());
      for (std::size_t c = 0; c < c_cov.size(); ++c)
        l.push_back(parse_double(f[c_cov[c]], "covariate " + schema.covariates[c] + " (" + where + ")"));
      seq.covariates.push_back(std::move(l));
      if (t >= 1) {
        if (schema.outcome_kind == OutcomeKind::counts) {
          const long ev = parse_long(f[c_ev], "outcome events (" + where + ")");
          const long tr = parse_long(f[c_tr], "outcome trials (" + where + ")");
          seq.outcome.events[static_cast<std::size_t>(t)] = ev;
          seq.outcome.trials[static_cast<std::size_t>(t)] = tr;
          if (tr < 1) throw ValidationError(where + ": outcome trials must be >= 1");
          seq.outcome.value[static_cast<std::size_t>(t)] =
              static_cast<double>(ev) / static_cast<double>(tr);
        } else {
          seq.outcome.value[static_cast<std::size_t>(t)] =
              parse_double(f[c_y], "outcome (" + where + ")");
        }
      }
    }
    data.units.push_back(std::move(unit));
  }

  data.validate();
  return data;
}

void save_panel(const PanelDataset& data, const std::string& path, const ColumnSchema& schema) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << schema.id << ',' << schema.time << ',' << schema.treatment;
  if (schema.outcome_kind == OutcomeKind::counts)
    out << ',' << schema.outcome_events << ',' << schema.outcome_trials;
  else
    out << ',' << schema.outcome_value;
  for (const auto& name : schema.covariates) out << ',' << name;
  out << '\n';
  out.precision(17);
  for (const auto& unit : data.units) {
    for (int t = 0; t <= data.K + 1; ++t) {
      out << unit.id << ',' << t << ',';
      if (t <= data.K)
        out << data.meta.levels.labels[static_cast<std::size_t>(unit.seq.treatments[static_cast<std::size_t>(t)])];
      if (data.meta.outcome_kind == OutcomeKind::counts) {
        out << ',';
        if (t >= 1)
          out << unit.seq.outcome.events[static_cast<std::size_t>(t)] << ','
              << unit.seq.outcome.trials[static_cast<std::size_t>(t)];
        else
          out << ',';
      } else {
        out << ',';
        if (t >= 1) out << unit.seq.outcome.value[static_cast<std::size_t>(t)];
      }
      for (double v : unit.seq.covariates[static_cast<std::size_t>(t)]) out << ',' << v;
      out << '\n';
    }
  }
  if (!out) throw IoError("write failure on '" + path + "'");
}

}  // namespace hrmsm
