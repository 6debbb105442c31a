#include <wigner/cli.hpp>

#include <CLI11.hpp>

#include <iostream>

namespace cli = wigner::cli;

int main(int argc, char** argv)
{
    CLI::App app{"Relativistic N-body rest-frame dynamics and statistical mechanics."};
    app.set_version_flag("--version", std::string(cli::version));
    app.require_subcommand(1);
    app.footer("Exit codes: 0 success, 2 invalid configuration, 3 numerical failure, 4 I/O failure.\n"
               "Options may also come from --config FILE ([section] headers, key = value lines);\n"
               "command-line flags take precedence over the file. WIGNER_THREADS overrides --threads.");

    struct Sub {
        CLI::App* app;
        std::string config;
        bool dry_run = false;
        std::map<std::string, std::string> values;
    };
    std::vector<Sub> subs(cli::commands().size());
    for (std::size_t i = 0; i < subs.size(); ++i) {
        const auto& info = cli::commands()[i];
        Sub& s = subs[i];
        s.app = app.add_subcommand(info.name, info.help);
        s.app->add_option("--config", s.config, "configuration file")->check(CLI::ExistingFile);
        s.app->add_flag("--validate", s.dry_run, "check the configuration, print it and exit");
        for (const auto& k : cli::keys()) {
            if (!(k.commands & info.bit)) continue;
            std::string help = k.help;
            const std::string def = cli::default_for(k, info.bit);
            if (!def.empty()) help += " [default: " + def + "]";
            s.app->add_option(std::string("--") + k.key, s.values[k.key], help)->group(k.section);
        }
    }

    try {
        app.parse(argc, argv);
    }
    catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    for (std::size_t i = 0; i < subs.size(); ++i) {
        Sub& s = subs[i];
        if (!s.app->parsed()) continue;
        std::map<std::string, std::string> flags;
        for (const auto& [key, value] : s.values)
            if (s.app->count(std::string("--") + key) > 0) flags[key] = value;
        try {
            const auto file = s.config.empty() ? std::vector<cli::ConfigEntry>{}
                                               : cli::parse_config_text(wigner::read_file(s.config));
            const cli::RunConfig cfg = cli::make_config(cli::commands()[i].name, file, flags);
            if (s.dry_run) {
                const auto errors = cli::validate(cfg);
                for (const auto& e : errors) std::cerr << "error: " << e << "\n";
                if (!errors.empty()) return 2;
                std::cout << cli::serialize(cfg);
                return 0;
            }
            const cli::Outcome oc = cli::run(cfg);
            for (const auto& m : oc.messages) std::cerr << "error: " << m << "\n";
            if (oc.exit_code == 0) std::cout << oc.summary.dump(2) << "\n";
            return oc.exit_code;
        }
        catch (const wigner::invalid_input& e) {
            std::cerr << "error: " << e.what() << "\n";
            return 2;
        }
        catch (const wigner::io_error& e) {
            std::cerr << "error: " << e.what() << "\n";
            return 4;
        }
    }
    return 2;
}
