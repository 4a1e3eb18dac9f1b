// edloc command-line entry point.

#include <iostream>
#include <map>
#include <string>

#include "CLI11.hpp"
#include "edloc/edloc.hpp"

namespace {

using namespace edloc;

struct Subcommand {
  Subcommand(CLI::App* a, unsigned b) : app(a), bit(b) {}
  CLI::App* app;
  unsigned bit;
  std::string config_file;
  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> options;
};

std::string flag_name(std::string_view key) {
  std::string s(key);
  for (char& c : s)
    if (c == '_') c = '-';
  return "--" + s;
}

bool is_bool_key(std::string_view key) { return key == "noiseless" || key == "fill_holes"; }

void add_keys(Subcommand& sub) {
  sub.app->add_option("--config", sub.config_file,
                      "key = value config file; flags override its entries");
  for (const auto& k : kConfigKeys) {
    if (!(k.commands & sub.bit)) continue;
    const std::string key(k.name);
    auto* opt = sub.app->add_option(flag_name(key), sub.values[key], std::string(k.help));
    if (is_bool_key(key)) opt->expected(0, 1);
    sub.options[key] = opt;
  }
}

RunConfig build_config(const Subcommand& sub) {
  RunConfig cfg;
  if (!sub.config_file.empty()) cfg.load_file(sub.config_file);
  for (const auto& k : kConfigKeys) {
    auto it = sub.options.find(std::string(k.name));
    if (it == sub.options.end() || it->second->count() == 0) continue;
    std::string value = sub.values.at(std::string(k.name));
    if (is_bool_key(k.name) && value.empty()) value = "true";
    cfg.set(k.name, value);
  }
  cfg.apply_environment();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"edloc: attention-guided edit localization for dual-stream "
               "editing transformers"};
  app.require_subcommand(1);
  app.footer(
      "Exit codes: 0 ok, 1 i/o error, 2 missing records, 3 validation failure, "
      "4 config error.\nThe record directory defaults to $EDLOC_RECORD_DIR.");

  Subcommand synth{app.add_subcommand("synth", "write synthetic record stores"), kSynth};
  Subcommand localize{app.add_subcommand("localize", "compute edit masks for every stage"),
                      kLocalize};
  Subcommand blend{app.add_subcommand("blend", "offline mask-guided latent blending"),
                   kBlend};
  Subcommand eval{app.add_subcommand("eval", "IoU sweeps over timesteps, tau and layers"),
                  kEval};
  Subcommand validate{app.add_subcommand("validate", "check a record store"), kValidate};
  for (Subcommand* s : {&synth, &localize, &blend, &eval, &validate}) add_keys(*s);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return exit_code(ErrorKind::config);
  }

  for (auto [sub, fn] : {std::pair{&synth, &cmd_synth}, std::pair{&localize, &cmd_localize},
                         std::pair{&blend, &cmd_blend}, std::pair{&eval, &cmd_eval},
                         std::pair{&validate, &cmd_validate}}) {
    if (!sub->app->parsed()) continue;
    return run_command([&] { return fn(build_config(*sub), std::cout); }, std::cerr);
  }
  return 1;
}
