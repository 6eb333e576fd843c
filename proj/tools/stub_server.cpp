// Serves the deterministic stub model over the HTTP wire protocol.

#include <iostream>
#include <memory>
#include <string>

#include "CLI11.hpp"
#include "parade/stub_server.hpp"

int main(int argc, char** argv)
{
    CLI::App app{"parade-stub-server: stub language model over HTTP"};
    std::string host = "127.0.0.1";
    int port = 8088;
    app.add_option("--host", host, "Bind address");
    app.add_option("--port", port, "Port");
    CLI11_PARSE(app, argc, argv);

    httplib::Server server;
    parade::mount_backend_routes(server, std::make_shared<parade::StubBackend>());
    std::cerr << "listening on http://" << host << ":" << port << "\n";
    if (!server.listen(host, port)) {
        std::cerr << "cannot bind " << host << ":" << port << "\n";
        return 1;
    }
    return 0;
}
