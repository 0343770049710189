#include <iostream>
#include <string>

#include "CLI11.hpp"

#include "leafcam/commands.hpp"

namespace {

std::optional<int> parse_class(const std::string& s) {
  if (s == "auto") return std::nullopt;
  std::size_t used = 0;
  int v = 0;
  try {
    v = std::stoi(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || s.empty()) throw leafcam::usage_error("--class must be 'auto' or an integer, got '" + s + "'");
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"leafcam: leaf disease classifiers with attention, ensembles, and Grad-CAM"};
  app.require_subcommand(1);

  leafcam::SynthOptions synth;
  auto* synth_cmd = app.add_subcommand("synth", "write a synthetic dataset tree");
  synth_cmd->add_option("--out", synth.out, "output directory")->required();
  synth_cmd->add_option("--classes", synth.classes, "number of classes")->capture_default_str();
  synth_cmd->add_option("--per-class", synth.per_class, "images per class")->capture_default_str();
  synth_cmd->add_option("--size", synth.size, "image side in pixels")->capture_default_str();
  synth_cmd->add_option("--seed", synth.seed)->capture_default_str();
  synth_cmd->add_option("--noise", synth.noise, "uniform pixel noise amplitude in [0,1]")->capture_default_str();
  synth_cmd->add_option("--jitter", synth.jitter, "blob offset range in pixels")->capture_default_str();
  synth_cmd->add_flag("--force", synth.force, "write into a non-empty directory");

  leafcam::TrainOptions train;
  std::string arch = "tiny-a", attention = "none", freeze = "none";
  std::string history;
  auto* train_cmd = app.add_subcommand("train", "train one model");
  train_cmd->add_option("--data", train.data, "dataset root")->required();
  train_cmd->add_option("--arch", arch, "tiny-a | tiny-b | tiny-c")->capture_default_str();
  train_cmd->add_option("--attention", attention, "none | se | cbam")->capture_default_str();
  train_cmd->add_option("--freeze", freeze, "none | last-block | all")->capture_default_str();
  train_cmd->add_option("--size", train.size, "input side in pixels")->capture_default_str();
  train_cmd->add_option("--epochs", train.epochs)->capture_default_str();
  train_cmd->add_option("--batch", train.batch)->capture_default_str();
  train_cmd->add_option("--lr", train.lr)->capture_default_str();
  train_cmd->add_option("--patience", train.patience)->capture_default_str();
  auto* adv = train_cmd->add_flag("--adv-train", train.adv_train, "mix in FGSM examples");
  train_cmd->add_option("--epsilon", train.epsilon)->capture_default_str()->needs(adv);
  train_cmd->add_option("--adv-mix", train.adv_mix)->capture_default_str()->needs(adv);
  train_cmd->add_option("--seed", train.seed)->required();
  train_cmd->add_option("--out", train.out, "checkpoint path")->required();
  train_cmd->add_option("--history", history, "history CSV path");

  leafcam::EvalOptions eval;
  std::string split = "test";
  std::string dump;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate one model or a soft-voting ensemble");
  eval_cmd->add_option("--model", eval.models, "checkpoint (repeat for an ensemble)")->required();
  eval_cmd->add_option("--weights", eval.weights, "per-model vote weights")->delimiter(',');
  eval_cmd->add_option("--data", eval.data, "dataset root")->required();
  eval_cmd->add_option("--split", split, "test | val | train")->capture_default_str();
  eval_cmd->add_option("--report", eval.report, "report JSON path")->required();
  eval_cmd->add_option("--seed", eval.seed, "split seed")->required();
  eval_cmd->add_option("--dump-probs", dump, "write member probabilities as JSON");

  leafcam::GradcamOptions cam;
  std::string cls = "auto";
  auto* cam_cmd = app.add_subcommand("gradcam", "write a Grad-CAM heatmap and overlay");
  cam_cmd->add_option("--model", cam.model)->required();
  cam_cmd->add_option("--image", cam.image)->required();
  cam_cmd->add_option("--class", cls, "auto | INDEX")->capture_default_str();
  cam_cmd->add_option("--alpha", cam.alpha)->capture_default_str();
  cam_cmd->add_option("--layer", cam.layer)->capture_default_str();
  cam_cmd->add_option("--out", cam.out, "output prefix")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*synth_cmd) {
      leafcam::run_synth(synth, std::cout);
    } else if (*train_cmd) {
      train.arch = leafcam::parse_backbone(arch);
      train.attention = leafcam::parse_attention(attention);
      train.freeze = leafcam::parse_freeze_policy(freeze);
      if (!history.empty()) train.history = history;
      leafcam::run_train(train, std::cout);
    } else if (*eval_cmd) {
      eval.split = leafcam::parse_split_tag(split);
      if (!dump.empty()) eval.dump_probs = dump;
      leafcam::run_eval(eval, std::cout);
    } else if (*cam_cmd) {
      cam.target_class = parse_class(cls);
      leafcam::run_gradcam(cam, std::cout);
    }
  } catch (const leafcam::Error& e) {
    std::cerr << "leafcam: " << leafcam::to_string(e.kind()) << " error: " << e.what() << "\n";
    return leafcam::exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "leafcam: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
