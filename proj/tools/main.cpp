#include <exception>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "lorakit/errors.hpp"
#include "lorakit/pipeline.hpp"

namespace {

namespace pl = lorakit::pipeline;

char one_char(const std::string& text, const char* flag) {
    if (text.size() != 1) {
        throw lorakit::ConfigError(std::string(flag) + " must be a single character");
    }
    return text[0];
}

void add_training_flags(CLI::App* cmd, lorakit::TrainingConfig& t, bool with_class_weights) {
    cmd->add_option("--lr", t.learning_rate, "learning rate")->capture_default_str();
    cmd->add_option("--epochs", t.epochs, "training epochs")->capture_default_str();
    cmd->add_option("--batch-size", t.batch_size, "examples per optimizer step")
        ->capture_default_str();
    cmd->add_option("--weight-decay", t.weight_decay, "decoupled weight decay")
        ->capture_default_str();
    cmd->add_option("--adam-eps", t.adam_eps, "Adam epsilon")->capture_default_str();
    cmd->add_option("--beta1", t.adam_beta1, "Adam first-moment decay")->capture_default_str();
    cmd->add_option("--beta2", t.adam_beta2, "Adam second-moment decay")->capture_default_str();
    cmd->add_option("--seed", t.seed, "seed for initialization, shuffling, and dropout")
        ->capture_default_str();
    if (with_class_weights) {
        cmd->add_option("--class-weights", t.class_weights,
                        "per-class loss weights, e.g. 1,4 (default: uniform)")
            ->delimiter(',');
    }
    cmd->add_flag("--keep-head{false},--keep-tail{true}", t.truncate_keep_tail,
                  "which end of an over-long document survives truncation (default: tail)");
}

void add_model_flags(CLI::App* cmd, lorakit::ModelConfig& m) {
    cmd->add_option("--d-model", m.d_model, "embedding width")->capture_default_str();
    cmd->add_option("--n-layers", m.n_layers, "decoder blocks")->capture_default_str();
    cmd->add_option("--n-heads", m.n_heads, "attention heads")->capture_default_str();
    cmd->add_option("--d-ff", m.d_ff, "feed-forward hidden width")->capture_default_str();
    cmd->add_option("--max-seq-len", m.max_seq_len, "maximum tokens per document")
        ->capture_default_str();
    cmd->add_option("--n-classes", m.n_classes, "classifier output classes")
        ->capture_default_str();
    cmd->add_option("--rope-theta", m.rope_theta, "rotary position base")->capture_default_str();
    cmd->add_option("--rmsnorm-eps", m.rmsnorm_eps, "RMS normalization epsilon")
        ->capture_default_str();
}

void add_lora_flags(CLI::App* cmd, lorakit::LoraConfig& l) {
    cmd->add_option("--rank", l.rank, "adapter rank r")->capture_default_str();
    cmd->add_option("--alpha", l.alpha, "adapter scale numerator (update scales by alpha/r)")
        ->capture_default_str();
    cmd->add_option("--lora-dropout", l.dropout_p, "dropout on the adapter-branch input")
        ->capture_default_str();
    cmd->add_option("--init-std", l.init_std, "standard deviation of the B-factor init")
        ->capture_default_str();
    cmd->add_option("--target-roles", l.target_roles,
                    "comma-separated projections to adapt: query_projection, key_projection, "
                    "value_projection, output_projection")
        ->delimiter(',');
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{
        "lorakit: a desk-scale pipeline around byte-level BPE, a small decoder-only\n"
        "transformer, low-rank adaptation, and binary text-classification metrics"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "lorakit 0.1.0");
    // One INI/TOML section per subcommand, e.g. [finetune]. Values given on
    // the command line always win over the file. fallthrough() lets the flag
    // appear after the subcommand name as well.
    app.set_config("--config", "", "read options from an INI/TOML file (one section per subcommand)");
    app.fallthrough(true);

    pl::PreprocessOptions pre;
    std::string pre_delim{","};
    CLI::App* pre_cmd =
        app.add_subcommand("preprocess", "parse, filter, label, and split raw data");
    pre_cmd->add_option("--xml", pre.pan12_xml, "chat-log XML corpus");
    pre_cmd->add_option("--predators", pre.predator_ids, "newline-delimited offender author ids");
    pre_cmd->add_option("--table", pre.table, "delimited table of texts and labels");
    pre_cmd->add_option("--text-column", pre.text_column, "table column holding the text");
    pre_cmd->add_option("--label-column", pre.label_column, "table column holding the label");
    pre_cmd->add_option("--positive-label", pre.positive_label, "label token mapped to class 1");
    pre_cmd->add_option("--negative-label", pre.negative_label,
                        "label token mapped to class 0 (default: everything else)");
    pre_cmd->add_option("--delimiter", pre_delim, "table field separator")->capture_default_str();
    pre_cmd->add_option("--dataset", pre.dataset, "existing dataset to re-stat or re-split");
    pre_cmd->add_option("--split", pre.split_fraction,
                        "train fraction in (0,1); writes train.tsv and test.tsv");
    pre_cmd->add_option("--seed", pre.seed, "seed for the split shuffle")->capture_default_str();
    pre_cmd->add_option("--out", pre.out_dir, "output directory")->required();

    pl::TrainTokenizerOptions tok;
    CLI::App* tok_cmd =
        app.add_subcommand("train-tokenizer", "learn a byte-level BPE vocabulary");
    tok_cmd->add_option("--dataset", tok.dataset, "labeled dataset supplying the texts");
    tok_cmd->add_option("--text", tok.text, "newline-delimited raw documents");
    tok_cmd->add_option("--vocab-size", tok.vocab_size, "target vocabulary size")
        ->capture_default_str();
    tok_cmd->add_option("--seed", tok.seed, "tie-break seed")->capture_default_str();
    tok_cmd->add_option("--out", tok.out_dir, "output directory")->required();

    pl::PretrainOptions pt;
    CLI::App* pt_cmd = app.add_subcommand(
        "pretrain", "train the language-model head with next-token prediction");
    pt_cmd->add_option("--vocab", pt.vocab, "tokenizer vocabulary file")->required();
    pt_cmd->add_option("--dataset", pt.dataset, "labeled dataset supplying the texts");
    pt_cmd->add_option("--text", pt.text, "newline-delimited raw documents");
    add_model_flags(pt_cmd, pt.model);
    add_training_flags(pt_cmd, pt.training, /*with_class_weights=*/false);
    pt_cmd->add_option("--out", pt.out_dir, "output directory")->required();

    pl::FinetuneOptions ft;
    CLI::App* ft_cmd = app.add_subcommand(
        "finetune", "attach low-rank adapters and train the classifier head");
    ft_cmd->add_option("--vocab", ft.vocab, "tokenizer vocabulary file")->required();
    ft_cmd->add_option("--checkpoint", ft.checkpoint, "base model checkpoint")->required();
    ft_cmd->add_option("--dataset", ft.dataset, "labeled training dataset")->required();
    add_lora_flags(ft_cmd, ft.lora);
    add_training_flags(ft_cmd, ft.training, /*with_class_weights=*/true);
    ft_cmd->add_option("--out", ft.out_dir, "output directory")->required();

    pl::MergeOptions mg;
    CLI::App* mg_cmd = app.add_subcommand(
        "merge", "fold adapters into the base weights for adapter-free inference");
    mg_cmd->add_option("--checkpoint", mg.checkpoint, "base model checkpoint")->required();
    mg_cmd->add_option("--adapters", mg.adapters, "trained adapter file")->required();
    mg_cmd->add_option("--out", mg.out_dir, "output directory")->required();

    pl::EvaluateOptions ev;
    CLI::App* ev_cmd =
        app.add_subcommand("evaluate", "score a labeled dataset and report binary metrics");
    ev_cmd->add_option("--vocab", ev.vocab, "tokenizer vocabulary file")->required();
    ev_cmd->add_option("--checkpoint", ev.checkpoint, "model checkpoint")->required();
    ev_cmd->add_option("--adapters", ev.adapters, "adapter file (optional)");
    ev_cmd->add_option("--dataset", ev.dataset, "labeled evaluation dataset")->required();
    ev_cmd->add_flag("--keep-head{false},--keep-tail{true}", ev.truncate_keep_tail,
                     "which end of an over-long document survives truncation (default: tail)");
    ev_cmd->add_option("--out", ev.out_dir, "output directory")->required();

    pl::PredictOptions pd;
    CLI::App* pd_cmd =
        app.add_subcommand("predict", "classify newline-delimited texts, printing label and "
                           "class probabilities per line");
    pd_cmd->add_option("--vocab", pd.vocab, "tokenizer vocabulary file")->required();
    pd_cmd->add_option("--checkpoint", pd.checkpoint, "model checkpoint")->required();
    pd_cmd->add_option("--adapters", pd.adapters, "adapter file (optional)");
    pd_cmd->add_option("--input", pd.input, "newline-delimited texts to classify")->required();
    pd_cmd->add_flag("--keep-head{false},--keep-tail{true}", pd.truncate_keep_tail,
                     "which end of an over-long document survives truncation (default: tail)");
    pd_cmd->add_option("--out", pd.out_dir, "also write predictions.tsv and a manifest here");

    pl::StatsOptions st;
    std::string st_delim{","};
    CLI::App* st_cmd =
        app.add_subcommand("stats", "print size, class balance, and length statistics");
    st_cmd->add_option("--dataset", st.dataset, "dataset file");
    st_cmd->add_option("--table", st.table, "delimited table of texts and labels");
    st_cmd->add_option("--text-column", st.text_column, "table column holding the text");
    st_cmd->add_option("--label-column", st.label_column, "table column holding the label");
    st_cmd->add_option("--positive-label", st.positive_label, "label token mapped to class 1");
    st_cmd->add_option("--negative-label", st.negative_label,
                       "label token mapped to class 0 (default: everything else)");
    st_cmd->add_option("--delimiter", st_delim, "table field separator")->capture_default_str();
    st_cmd->add_option("--out", st.out_dir, "also write stats.tsv and a manifest here");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;  // 0 covers --help/--version; grammar errors are 2
    }

    try {
        if (*pre_cmd) {
            pre.delimiter = one_char(pre_delim, "--delimiter");
            pl::run_preprocess(pre, std::cout);
        } else if (*tok_cmd) {
            pl::run_train_tokenizer(tok, std::cout);
        } else if (*pt_cmd) {
            pl::run_pretrain(pt, std::cout);
        } else if (*ft_cmd) {
            pl::run_finetune(ft, std::cout);
        } else if (*mg_cmd) {
            pl::run_merge(mg, std::cout);
        } else if (*ev_cmd) {
            pl::run_evaluate(ev, std::cout);
        } else if (*pd_cmd) {
            pl::run_predict(pd, std::cout);
        } else if (*st_cmd) {
            st.delimiter = one_char(st_delim, "--delimiter");
            pl::run_stats(st, std::cout);
        }
    } catch (const lorakit::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
