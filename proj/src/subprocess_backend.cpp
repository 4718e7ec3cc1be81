#include <boost/process.hpp>

#include <csignal>

#include <nlohmann/json.hpp>

#include "cascade/backends.hpp"
#include "cascade/error.hpp"

namespace bp = boost::process;

namespace cascade {

namespace {
constexpr int kAttempts = 3;
}

struct SubprocessBackend::Impl {
    std::vector<std::string> command;
    std::mutex mu;
    std::unique_ptr<bp::opstream> to_child;
    std::unique_ptr<bp::ipstream> from_child;
    std::unique_ptr<bp::child> child;

    void spawn() {
        to_child = std::make_unique<bp::opstream>();
        from_child = std::make_unique<bp::ipstream>();
        auto exe = bp::search_path(command.front());
        if (exe.empty()) exe = command.front();
        std::vector<std::string> args(command.begin() + 1, command.end());
        child = std::make_unique<bp::child>(exe, bp::args(args), bp::std_in<*to_child, bp::std_out> * from_child);
    }

    void shutdown() {
        if (!child) return;
        if (to_child) to_child->pipe().close();
        std::error_code ec;
        if (child->running(ec)) {
            if (!child->wait_for(std::chrono::milliseconds(500), ec)) child->terminate(ec);
        }
        child.reset();
        to_child.reset();
        from_child.reset();
    }
};

SubprocessBackend::SubprocessBackend(BackendDescriptor desc, std::size_t num_classes)
    : Backend(std::move(desc)), k_(num_classes), impl_(std::make_unique<Impl>()) {
    impl_->command = std::get<SubprocessConfig>(desc_.config).command;
    if (impl_->command.empty()) throw Error(ErrorKind::InvalidConfig, "subprocess backend '" + desc_.id + "' has no command");
    // A dead child must surface as a failed write, not kill this process.
    std::signal(SIGPIPE, SIG_IGN);
}

SubprocessBackend::~SubprocessBackend() { impl_->shutdown(); }

PredictionRecord SubprocessBackend::predict(const LabeledExample& example) const {
    const std::string request = nlohmann::json{{"example_id", example.id}, {"payload", example.payload}}.dump();
    std::lock_guard lock(impl_->mu);
    std::string last_error;
    for (int attempt = 0; attempt < kAttempts; ++attempt) {
        try {
            if (!impl_->child || !impl_->child->running()) {
                impl_->shutdown();
                impl_->spawn();
            }
            *impl_->to_child << request << '\n' << std::flush;
            if (!*impl_->to_child) {
                last_error = "write to process failed";
                impl_->shutdown();
                continue;
            }
            std::string line;
            if (!std::getline(*impl_->from_child, line)) {
                last_error = "process closed its output";
                impl_->shutdown();
                continue;
            }
            auto rec = parse_wire_row(line, k_);
            if (rec.example_id != example.id) {
                throw Error(ErrorKind::SchemaError, "response for '" + rec.example_id + "' while '" + example.id + "' was requested");
            }
            rec.backend_id = desc_.id;
            return rec;
        } catch (const std::system_error& e) {
            last_error = e.what();
            impl_->shutdown();
        }
    }
    throw Error(ErrorKind::BackendUnavailable, "subprocess backend '" + desc_.id + "' failed: " + last_error);
}

}  // namespace cascade
