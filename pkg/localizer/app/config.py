from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    app_name: str = "WiFi fingerprint localizer"
    # Dataset cache directory; relative manifest/CSV paths in a run config resolve against it.
    data_dir: str = "data"
    # Run-stamped output directories are created below this root unless a config overrides it.
    output_root: str = "runs"
    log_level: str = "INFO"
    # tqdm bars around epoch loops; off by default to keep CI logs readable.
    progress: bool = False

    model_config = SettingsConfigDict(
        env_prefix="CNNLOC_", env_file=".env", env_file_encoding="utf-8", extra="ignore")


settings = Settings()
