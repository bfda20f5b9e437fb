from cli.config import save_config, schema_lines
from cli.context import AppContext


def cmd_config(args, ctx: AppContext) -> int:
    if args.show:
        for line in schema_lines():
            print(line)
        return 0
    if args.emit:
        path = save_config(args.emit, ctx.config.values)
        print(f"effective config ({ctx.config_hash}) -> {path}")
        return 0
    for key in sorted(ctx.config.values):
        print(f"{key}={ctx.config.values[key]}")
    return 0
