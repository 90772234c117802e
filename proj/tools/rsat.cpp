// Command-line front door: corpus generation, training, evaluation,
// inference, and the ablation grid.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 runtime failure.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "rsat/baseline.hpp"
#include "rsat/evaluation.hpp"
#include "rsat/synth.hpp"
#include "rsat/training.hpp"

namespace {

using namespace rsat;

struct CommonOpts {
  std::string profile = "desk";
  std::uint64_t seed = 1;
  int workers = 1;
  std::string task = "sx";
};

Task parse_task(const std::string& s) {
  if (s == "sx") return Task::Sx;
  if (s == "rx") return Task::Rx;
  throw CLI::ValidationError("--task must be sx or rx");
}

EncoderConfig encoder_profile(const std::string& profile) {
  if (profile == "paper") return EncoderConfig::paper();
  if (profile == "desk") return EncoderConfig::desk();
  throw CLI::ValidationError("--profile must be desk or paper");
}

TrainConfig train_profile(const std::string& profile) {
  return profile == "paper" ? TrainConfig::paper() : TrainConfig::desk();
}

nlohmann::json report_json(const EvalReport& rep, bool per_conv) {
  nlohmann::json j;
  j["precision"] = rep.precision;
  j["recall"] = rep.recall;
  j["f1"] = rep.f1;
  j["n_pred"] = rep.n_pred;
  j["n_ref"] = rep.n_ref;
  if (per_conv) {
    nlohmann::json convs = nlohmann::json::array();
    for (const auto& ce : rep.per_conversation) {
      double psum = 0.0, rsum = 0.0;
      for (double x : ce.pred_best) psum += x;
      for (double x : ce.ref_best) rsum += x;
      convs.push_back({{"id", ce.id},
                       {"n_pred", ce.n_pred},
                       {"n_ref", ce.n_ref},
                       {"precision", ce.n_pred ? psum / ce.n_pred : 1.0},
                       {"recall", ce.n_ref ? rsum / ce.n_ref : 1.0}});
    }
    j["per_conversation"] = std::move(convs);
  }
  return j;
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open for writing: " + path);
  out << text;
}

std::vector<AnnotatedConversation> load_task_corpus(const std::string& path,
                                                    Task task) {
  auto corpus = load_corpus(path);
  for (const auto& conv : corpus)
    if (conv.task != task)
      throw DataError(path + ": conversation " + conv.id +
                      " belongs to the other task");
  return corpus;
}

// Ontology for a corpus: desk defaults sized by the largest class ids seen.
TaskOntology infer_ontology(Task task,
                            const std::vector<AnnotatedConversation>& corpus) {
  int max_ent = -1, max_status = -1, max_prop = -1;
  for (const auto& conv : corpus)
    for (const auto& s : conv.spans) {
      auto get = [&](const std::string& k) {
        auto it = s.attributes.find(k);
        return it == s.attributes.end() ? -1 : it->second;
      };
      max_ent = std::max(max_ent, get(kAttrSymType));
      max_status = std::max(max_status, get(kAttrSymStatus));
      max_prop = std::max(max_prop, get(kAttrPropType));
    }
  if (task == Task::Rx) return TaskOntology::rx(std::max(3, max_prop + 1));
  return TaskOntology::sx(std::max(12, max_ent + 1), std::max(4, max_prop + 1),
                          std::max(3, max_status + 1));
}

struct TrainIo {
  std::vector<AnnotatedConversation> train, dev, test;
  std::optional<KnowledgeGraph> kg;
};

std::string tuple_line(const ExtractedTuple& t) {
  std::string first = t.entity_is_class ? t.entity_class : "";
  if (!t.entity_is_class) {
    for (std::size_t i = 0; i < t.entity_tokens.size(); ++i)
      first += (i ? " " : "") + t.entity_tokens[i];
  }
  std::string content;
  for (std::size_t i = 0; i < t.content.size(); ++i)
    content += (i ? " " : "") + t.content[i];
  if (!t.has_content) return "(" + first + ", " + t.second + ")";
  return "(" + first + ", " + t.second + ", [" + content + "])";
}

int run(int argc, char** argv) {
  CLI::App app{"Relational span-attribute tagging over conversations"};
  app.require_subcommand(1);
  app.set_config("--config", "", "flat key=value configuration file");
  app.fallthrough();

  CommonOpts common;
  app.add_option("--profile", common.profile, "desk or paper");
  app.add_option("--seed", common.seed, "master random seed");
  app.add_option("--workers", common.workers, "evaluation parallelism");
  app.add_option("--task", common.task, "sx or rx");

  // generate ------------------------------------------------------------
  auto* gen = app.add_subcommand("generate", "write a synthetic corpus");
  std::string gen_out, gen_kg_out;
  SynthConfig scfg;
  gen->add_option("--out", gen_out, "corpus output path")->required();
  gen->add_option("--kg-out", gen_kg_out, "knowledge-graph output path");
  gen->add_option("--conversations", scfg.n_conversations);
  gen->add_option("--vocab", scfg.vocab_size);
  gen->add_option("--entity-classes", scfg.n_entity_classes);
  gen->add_option("--prop-classes", scfg.n_prop_classes);
  gen->add_option("--status-classes", scfg.n_status_classes);
  gen->add_option("--mean-utterances", scfg.mean_utterances);
  gen->add_option("--cross-turn", scfg.cross_turn_prob);
  gen->add_option("--distractor-rate", scfg.distractor_rate);
  gen->add_option("--kg-fraction", scfg.kg_fraction);
  gen->add_option("--kg-dim", scfg.kg_dim);
  gen->add_option("--kg-types", scfg.kg_types);

  // train ---------------------------------------------------------------
  auto* tr = app.add_subcommand("train", "train a model");
  std::string tr_train, tr_dev, tr_data, tr_split = "0.8,0.1,0.1";
  std::string tr_kg, tr_out, tr_log, tr_arch = "rsat", tr_pretrain;
  std::uint64_t tr_split_seed = 1;
  int tr_pretrain_epochs = 3;
  std::optional<int> o_epochs, o_patience, o_batch_accum, o_decay, o_eval_every;
  std::optional<double> o_lr, o_alpha, o_l2, o_dropout, o_vn, o_pend, o_clip;
  bool no_kg = false, no_context = false, no_buffer = false, no_multitask = false;
  tr->add_option("--train", tr_train, "training corpus");
  tr->add_option("--dev", tr_dev, "development corpus");
  tr->add_option("--data", tr_data, "single corpus to split");
  tr->add_option("--split", tr_split, "train,dev,test fractions for --data");
  tr->add_option("--split-seed", tr_split_seed);
  tr->add_option("--kg", tr_kg, "knowledge-graph file");
  tr->add_option("--out", tr_out, "checkpoint output path")->required();
  tr->add_option("--log", tr_log, "training log (one json line per epoch)");
  tr->add_option("--arch", tr_arch, "rsat or baseline");
  tr->add_option("--pretrain", tr_pretrain, "unlabeled corpus for pretraining");
  tr->add_option("--pretrain-epochs", tr_pretrain_epochs);
  tr->add_option("--epochs", o_epochs);
  tr->add_option("--lr", o_lr);
  tr->add_option("--alpha", o_alpha);
  tr->add_option("--l2", o_l2);
  tr->add_option("--dropout", o_dropout);
  tr->add_option("--vn-std", o_vn);
  tr->add_option("--p-end", o_pend);
  tr->add_option("--decay-epochs", o_decay);
  tr->add_option("--patience", o_patience);
  tr->add_option("--eval-every", o_eval_every);
  tr->add_option("--batch-accum", o_batch_accum);
  tr->add_option("--clip-norm", o_clip);
  tr->add_flag("--no-kg", no_kg, "drop KG/POS feature fusion");
  tr->add_flag("--no-context", no_context, "drop span context from the buffer");
  tr->add_flag("--no-buffer", no_buffer, "replace the buffer with the cross-product head");
  tr->add_flag("--no-multitask", no_multitask, "drop the status head");

  // eval ----------------------------------------------------------------
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string ev_model, ev_data, ev_report;
  bool ev_relation_only = false, ev_mention_exact = false;
  ev->add_option("--model", ev_model)->required();
  ev->add_option("--data", ev_data)->required();
  ev->add_option("--report", ev_report, "report output path");
  ev->add_flag("--relation-only", ev_relation_only,
               "score relation selection over gold spans");
  ev->add_flag("--mention-exact", ev_mention_exact,
               "relation-only: require the exact gold mention");

  // infer ---------------------------------------------------------------
  auto* in = app.add_subcommand("infer", "print extracted tuples");
  std::string in_model, in_data;
  bool in_json = false;
  in->add_option("--model", in_model)->required();
  in->add_option("--data", in_data)->required();
  in->add_flag("--json", in_json, "emit one json object per conversation");

  // ablate ----------------------------------------------------------------
  auto* ab = app.add_subcommand("ablate", "run the ablation grid");
  std::string ab_train, ab_dev, ab_test, ab_kg, ab_out_dir = ".", ab_steps;
  std::optional<int> ab_epochs;
  ab->add_option("--train", ab_train)->required();
  ab->add_option("--dev", ab_dev)->required();
  ab->add_option("--test", ab_test)->required();
  ab->add_option("--kg", ab_kg);
  ab->add_option("--out-dir", ab_out_dir);
  ab->add_option("--steps", ab_steps,
                 "comma-separated ablation chain (default per task)");
  ab->add_option("--epochs", ab_epochs);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  Task task = parse_task(common.task);

  if (*gen) {
    scfg.task = task;
    scfg.seed = common.seed;
    SynthOutput out = generate_corpus(scfg);
    save_corpus(out.conversations, gen_out);
    if (!gen_kg_out.empty()) save_kg(out.kg, gen_kg_out);
    std::cout << "wrote " << out.conversations.size() << " conversations to "
              << gen_out << "\n";
    return 0;
  }

  if (*tr) {
    TrainIo io;
    if (!tr_data.empty()) {
      auto corpus = load_task_corpus(tr_data, task);
      std::array<double, 3> fr{0, 0, 0};
      if (std::sscanf(tr_split.c_str(), "%lf,%lf,%lf", &fr[0], &fr[1], &fr[2]) != 3)
        throw ConfigError("--split expects three comma-separated fractions");
      auto parts = split_corpus(corpus, fr, tr_split_seed);
      io.train = std::move(parts[0]);
      io.dev = std::move(parts[1]);
      io.test = std::move(parts[2]);
    } else {
      if (tr_train.empty())
        throw ConfigError("train needs --train or --data");
      io.train = load_task_corpus(tr_train, task);
      if (!tr_dev.empty()) io.dev = load_task_corpus(tr_dev, task);
    }
    if (!tr_kg.empty()) io.kg = load_kg(tr_kg);

    EncoderConfig ecfg = encoder_profile(common.profile);
    TrainConfig tcfg = train_profile(common.profile);
    tcfg.seed = common.seed;
    if (o_epochs) tcfg.epochs = *o_epochs;
    if (o_lr) tcfg.lr = *o_lr;
    if (o_alpha) tcfg.alpha = *o_alpha;
    if (o_l2) tcfg.l2 = *o_l2;
    if (o_dropout) tcfg.dropout = *o_dropout;
    if (o_vn) tcfg.vn_std = *o_vn;
    if (o_pend) tcfg.p_end = *o_pend;
    if (o_decay) tcfg.decay_epochs = *o_decay;
    if (o_patience) tcfg.patience = *o_patience;
    if (o_eval_every) tcfg.eval_every = *o_eval_every;
    if (o_batch_accum) tcfg.batch_accum = *o_batch_accum;
    if (o_clip) tcfg.clip_norm = *o_clip;
    tcfg.use_kg = !no_kg;
    tcfg.use_context = !no_context;
    tcfg.use_buffer = !no_buffer;
    tcfg.multitask = !no_multitask;
    tcfg.check(task);

    TaskOntology onto = infer_ontology(task, io.train);

    Pretrained pre;
    const Pretrained* pre_ptr = nullptr;
    if (!tr_pretrain.empty()) {
      auto unlabeled = load_task_corpus(tr_pretrain, task);
      PretrainConfig pc;
      pc.epochs = tr_pretrain_epochs;
      pc.seed = common.seed;
      EncoderConfig pe = ecfg;
      if (!tcfg.use_kg) {
        pe.use_kg = false;
        pe.use_pos = false;
      }
      pre = pretrain_next_turn(unlabeled, pe, io.kg ? &*io.kg : nullptr, pc);
      pre_ptr = &pre;
    }

    if (tr_arch == "baseline") {
      if (task != Task::Sx)
        throw ConfigError("the cross-product baseline covers the sx task only");
      auto r = train_baseline(io.train, io.dev, onto, ecfg, tcfg, io.kg, pre_ptr);
      save_baseline_checkpoint(*r.model, tr_out);
      std::cout << "baseline checkpoint written to " << tr_out
                << " (best dev F1 " << r.best_dev_f1 << " at epoch "
                << r.best_epoch << ")\n";
      return 0;
    }
    if (tr_arch != "rsat") throw ConfigError("--arch must be rsat or baseline");

    auto r = train_model(io.train, io.dev, task, onto, ecfg, tcfg, io.kg, pre_ptr);
    save_checkpoint(*r.model, tr_out);
    std::string log_text;
    for (const auto& e : r.log) {
      nlohmann::json line = {{"epoch", e.epoch},
                             {"train_loss", e.train_loss},
                             {"dev_f1", e.dev_f1},
                             {"dev_f1_status", e.dev_f1_status},
                             {"p", e.p}};
      log_text += line.dump() + "\n";
    }
    if (!tr_log.empty()) write_text_file(tr_log, log_text);
    std::cout << log_text;
    std::cout << "checkpoint written to " << tr_out << " (best dev F1 "
              << r.best_dev_f1 << " at epoch " << r.best_epoch << ")\n";
    return 0;
  }

  if (*ev) {
    std::string arch = checkpoint_arch(ev_model);
    nlohmann::json j;
    j["arch"] = arch;
    j["data"] = ev_data;
    if (arch == "baseline") {
      auto m = load_baseline_checkpoint(ev_model);
      auto corpus = load_task_corpus(ev_data, Task::Sx);
      if (ev_relation_only)
        throw ConfigError("relation-only evaluation requires the memory buffer");
      BaselineEval be = evaluate_baseline(*m, corpus, common.workers);
      j["task"] = "sx";
      j["property"] = report_json(be.property, true);
      j["status"] = report_json(be.status, true);
    } else {
      auto m = load_checkpoint(ev_model);
      auto corpus = load_task_corpus(ev_data, m->task);
      j["task"] = to_string(m->task);
      if (ev_relation_only) {
        EvalReport rep =
            relation_only_eval(*m, corpus, ev_mention_exact, common.workers);
        j["relation_only"] = report_json(rep, true);
      } else {
        TaskEval te = evaluate_model(*m, corpus, common.workers);
        j["property"] = report_json(te.property, true);
        if (te.status) j["status"] = report_json(*te.status, true);
      }
    }
    std::string text = j.dump(2) + "\n";
    if (!ev_report.empty()) write_text_file(ev_report, text);
    std::cout << text;
    return 0;
  }

  if (*in) {
    auto m = load_checkpoint(in_model);
    auto corpus = load_corpus(in_data);
    for (auto& conv : corpus) {
      if (conv.task != m->task)
        throw DataError("conversation " + conv.id + " belongs to the other task");
      for (auto& u : conv.utterances)
        for (auto& t : u.tokens)
          if (t.pos_tag < 0) t.pos_tag = pos_tag_of_word(t.text);
      ExtractionResult r = extract_tuples(*m, conv);
      if (in_json) {
        nlohmann::json jt = nlohmann::json::array();
        for (const auto& t : r.tuples.props)
          jt.push_back({{"first", t.entity_is_class
                                      ? nlohmann::json(t.entity_class)
                                      : nlohmann::json(t.entity_tokens)},
                        {"second", t.second},
                        {"content", t.content}});
        nlohmann::json js = nlohmann::json::array();
        for (const auto& t : r.tuples.statuses)
          js.push_back({{"first", t.entity_class}, {"second", t.second}});
        std::cout << nlohmann::json({{"id", conv.id},
                                     {"tuples", jt},
                                     {"statuses", js}})
                         .dump()
                  << "\n";
      } else {
        std::cout << conv.id << ":\n";
        for (const auto& t : r.tuples.props)
          std::cout << "  " << tuple_line(t) << "\n";
        for (const auto& t : r.tuples.statuses)
          std::cout << "  " << tuple_line(t) << "\n";
      }
    }
    return 0;
  }

  if (*ab) {
    auto train = load_task_corpus(ab_train, task);
    auto dev = load_task_corpus(ab_dev, task);
    auto test = load_task_corpus(ab_test, task);
    std::optional<KnowledgeGraph> kg;
    if (!ab_kg.empty()) kg = load_kg(ab_kg);
    TaskOntology onto = infer_ontology(task, train);

    std::vector<std::string> steps;
    if (!ab_steps.empty()) {
      std::string cur;
      for (char c : ab_steps + ",") {
        if (c == ',') {
          if (!cur.empty()) steps.push_back(cur);
          cur.clear();
        } else {
          cur += c;
        }
      }
    } else if (task == Task::Sx) {
      steps = {"kg", "context", "buffer", "multitask"};
    } else {
      steps = {"kg", "context"};
    }
    for (const auto& s : steps) {
      if (s != "kg" && s != "context" && s != "buffer" && s != "multitask")
        throw ConfigError("unknown ablation step: " + s);
      if (task == Task::Rx && (s == "buffer" || s == "multitask"))
        throw ConfigError("ablation step '" + s + "' is n/a for rx");
    }

    struct Row {
      std::string label;
      double prop_f1 = 0.0;
      double status_f1 = -1.0;  // -1 = n/a
    };
    std::vector<Row> rows;
    nlohmann::json jrows = nlohmann::json::array();
    TrainConfig base_cfg = train_profile(common.profile);
    base_cfg.seed = common.seed;
    if (ab_epochs) base_cfg.epochs = *ab_epochs;

    for (std::size_t k = 0; k <= steps.size(); ++k) {
      TrainConfig tcfg = base_cfg;
      std::string label = "full";
      if (k > 0) {
        label = "w/o [";
        for (std::size_t i = 0; i < k; ++i) {
          label += (i ? ", " : "");
          if (steps[i] == "kg") { tcfg.use_kg = false; label += "KG"; }
          if (steps[i] == "context") { tcfg.use_context = false; label += "Context"; }
          if (steps[i] == "buffer") { tcfg.use_buffer = false; label += "Buffer"; }
          if (steps[i] == "multitask") { tcfg.multitask = false; label += "Multi-task"; }
        }
        label += "]";
      }
      auto r = train_model(train, dev, task, onto, encoder_profile(common.profile),
                           tcfg, kg);
      TaskEval e = evaluate_model(*r.model, test, common.workers);
      Row row;
      row.label = label;
      row.prop_f1 = e.property.f1;
      if (e.status) row.status_f1 = e.status->f1;
      rows.push_back(row);
      jrows.push_back({{"model", label},
                       {"property_f1", row.prop_f1},
                       {"status_f1", row.status_f1 < 0
                                         ? nlohmann::json(nullptr)
                                         : nlohmann::json(row.status_f1)}});
      std::cout << "finished: " << label << " (property F1 " << row.prop_f1
                << ")\n";
    }

    std::string prop_col = task == Task::Sx ? "Sx+Property" : "Rx+Property";
    char buf[256];
    std::string table;
    std::snprintf(buf, sizeof(buf), "%-44s %12s %12s\n", "model",
                  prop_col.c_str(), task == Task::Sx ? "Sx+Status" : "");
    table += buf;
    for (const auto& row : rows) {
      std::string status = row.status_f1 < 0 ? "n/a" : "";
      if (row.status_f1 >= 0) {
        std::snprintf(buf, sizeof(buf), "%.3f", row.status_f1);
        status = buf;
      }
      std::snprintf(buf, sizeof(buf), "%-44s %12.3f %12s\n", row.label.c_str(),
                    row.prop_f1, task == Task::Sx ? status.c_str() : "");
      table += buf;
    }
    std::cout << table;
    write_text_file(ab_out_dir + "/ablation_table.txt", table);
    write_text_file(ab_out_dir + "/ablation.json", jrows.dump(2) + "\n");
    return 0;
  }

  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: usage: " << e.what() << "\n";
    return 1;
  } catch (const ConfigError& e) {
    std::cerr << "error: usage: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "error: data: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: runtime: " << e.what() << "\n";
    return 3;
  }
}
